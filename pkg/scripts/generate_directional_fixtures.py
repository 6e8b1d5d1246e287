#!/usr/bin/env python3
"""Pre-compute the directional-experiment fixtures with the naive reference loop.

Runs the three shift families (prior shift, likelihood shift, combined) over
their frozen seed blocks using the pure-Python ReferenceAdapter -- not the
vectorized engine -- and records per-seed last-half accuracies per ablation
arm into tests/fixtures/directional_margins.json.  The acceptance suite
replays the same streams through the engine and checks both the directional
win counts and agreement with these independently computed numbers.

Takes roughly half an hour single-core; rerun only when the experiment
definitions change.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

from bca.harness import last_half_start
from bca.synthgen import (
    MeanRotation,
    ReferenceAdapter,
    StreamSpec,
    cyclic_confusion,
    make_class_means,
    make_text_embeddings,
    sample_stream,
)

SEEDS = list(range(1000, 1020))

FAMILIES = {
    # Corrupted template bank: a fraction of templates sits closer to another
    # class than to its own, so the one-hot priors are systematically wrong.
    # Likelihood adaptation is nearly frozen (large virtual-count inertia);
    # prior adaptation re-estimates what each template actually serves.
    "prior_shift": {
        "stream": {
            "num_classes": 10,
            "embedding_dim": 64,
            "num_samples": 10000,
            "templates_per_class": 5,
            "noise_scale": 0.1,
            "text_perturbation": 1.7,
            "min_separation": 0.9,
            "confusion_diagonal": 0.7,
            "rotation_angle": None,
        },
        "adapter": {"tau": 0.3, "n1": 30000, "n2": 20, "temperature": 30.0},
        "modes": ["baseline", "pa", "full"],
    },
    # Pure likelihood shift: every class mean rotated away from its text
    # embedding; prototypes must chase the rotated clouds.
    "likelihood_shift": {
        "stream": {
            "num_classes": 10,
            "embedding_dim": 64,
            "num_samples": 10000,
            "templates_per_class": 1,
            "noise_scale": 0.2,
            "text_perturbation": 0.0,
            "min_separation": 0.9,
            "confusion_diagonal": None,
            "rotation_angle": 0.8,
        },
        "adapter": {"tau": 0.3, "n1": 300, "n2": 20, "temperature": 30.0},
        "modes": ["baseline", "la", "full"],
    },
    # Both wrongs at once: rotated clouds and a partially corrupted bank.
    "combined_shift": {
        "stream": {
            "num_classes": 10,
            "embedding_dim": 64,
            "num_samples": 10000,
            "templates_per_class": 3,
            "noise_scale": 0.15,
            "text_perturbation": 1.3,
            "min_separation": 0.9,
            "confusion_diagonal": 0.7,
            "rotation_angle": 0.6,
        },
        "adapter": {"tau": 0.3, "n1": 3000, "n2": 20, "temperature": 30.0},
        "modes": ["baseline", "la", "pa", "full"],
    },
}

MODE_FLAGS = {
    "la": {"adapt_embedding": True, "adapt_prior": False},
    "pa": {"adapt_embedding": False, "adapt_prior": True},
    "full": {"adapt_embedding": True, "adapt_prior": True},
}


def build_stream(stream_cfg: dict, seed: int):
    shifts = []
    if stream_cfg["confusion_diagonal"] is not None:
        shifts.append(
            cyclic_confusion(stream_cfg["num_classes"], stream_cfg["confusion_diagonal"])
        )
    if stream_cfg["rotation_angle"] is not None:
        shifts.append(MeanRotation(stream_cfg["rotation_angle"]))
    spec = StreamSpec(
        num_classes=stream_cfg["num_classes"],
        embedding_dim=stream_cfg["embedding_dim"],
        num_samples=stream_cfg["num_samples"],
        templates_per_class=stream_cfg["templates_per_class"],
        noise_scale=stream_cfg["noise_scale"],
        text_perturbation=stream_cfg["text_perturbation"],
        shifts=tuple(shifts),
        seed=seed,
        min_separation=stream_cfg["min_separation"],
    )
    means = make_class_means(
        spec.num_classes, spec.embedding_dim, seed, spec.min_separation
    )
    bank = make_text_embeddings(
        means, spec.templates_per_class, spec.text_perturbation, seed
    )
    embeddings, labels = sample_stream(spec)
    return bank, embeddings, labels


def main() -> int:
    out_path = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
    out_path.mkdir(parents=True, exist_ok=True)
    payload = {"seeds": SEEDS, "families": {}}
    t_start = time.time()
    for name, family in FAMILIES.items():
        stream_cfg = family["stream"]
        adapter_cfg = family["adapter"]
        results = {}
        for seed in SEEDS:
            bank, embeddings, labels = build_stream(stream_cfg, seed)
            half = last_half_start(len(labels))
            per_mode = {}
            for mode in family["modes"]:
                ref = ReferenceAdapter(
                    bank,
                    tau=adapter_cfg["tau"],
                    init_count_embedding=adapter_cfg["n1"],
                    init_count_prior=adapter_cfg["n2"],
                    temperature=adapter_cfg["temperature"],
                    num_classes=stream_cfg["num_classes"],
                )
                correct_late = 0
                for i, (f, y) in enumerate(zip(embeddings, labels)):
                    if mode == "baseline":
                        pred = ref.step_frozen(f)
                    else:
                        pred, _ = ref.step(f, **MODE_FLAGS[mode])
                    if i >= half and pred == y:
                        correct_late += 1
                per_mode[mode] = correct_late / (len(labels) - half)
            results[str(seed)] = per_mode
            print(
                f"[{time.time() - t_start:7.1f}s] {name} seed {seed}: "
                + " ".join(f"{m}={v:.4f}" for m, v in per_mode.items()),
                flush=True,
            )
        payload["families"][name] = {
            "stream": stream_cfg,
            "adapter": adapter_cfg,
            "modes": family["modes"],
            "last_half_accuracy": results,
        }
    target = out_path / "directional_margins.json"
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

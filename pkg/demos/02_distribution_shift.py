"""Show when each adaptation mechanism earns its keep.

Two streams, four ablation arms each:

* a rotated stream, where every class's samples drift away from the text
  embeddings (the prototypes are wrong -> likelihood adaptation recovers);
* a corrupted-bank stream, where some templates sit closer to another class
  than to their own (the one-hot priors are wrong -> prior adaptation
  recovers by re-estimating what each template actually attracts).
"""

from bca import AdapterConfig, init_state
from bca.harness import AblationMode, run_stream
from bca.synthgen import (
    MeanRotation,
    StreamSpec,
    cyclic_confusion,
    make_class_means,
    make_text_embeddings,
    sample_stream,
)

ARMS = [
    ("Baseline", AblationMode.BASELINE),
    ("LA only", AblationMode.LIKELIHOOD_ONLY),
    ("PA only", AblationMode.PRIOR_ONLY),
    ("Full", AblationMode.FULL),
]


def run_arms(spec: StreamSpec, n1: int, n2: int, temperature: float):
    means = make_class_means(spec.num_classes, spec.embedding_dim, spec.seed,
                             spec.min_separation)
    bank = make_text_embeddings(means, spec.templates_per_class,
                                spec.text_perturbation, spec.seed)
    stream, labels = sample_stream(spec)
    for name, mode in ARMS:
        config = AdapterConfig(
            num_class_embeddings=bank.shape[0],
            num_classes=spec.num_classes,
            embedding_dim=spec.embedding_dim,
            tau=0.3,
            init_count_embedding=n1,
            init_count_prior=n2,
            temperature=temperature,
        )
        state = init_state(bank, config)
        report = run_stream(state, stream, labels, mode=mode)
        print(
            f"  {name:<9} overall={report.overall_accuracy:.3f} "
            f"last_half={report.last_half_accuracy:.3f} "
            f"updates={report.updates_fired}"
        )


print("rotated stream (likelihood shift): prototypes must chase the clouds")
run_arms(
    StreamSpec(
        num_classes=10, embedding_dim=64, num_samples=4000, noise_scale=0.2,
        shifts=(MeanRotation(0.8),), seed=3, min_separation=0.9,
    ),
    n1=300, n2=20, temperature=30.0,
)

print("\ncorrupted bank (prior shift): some templates serve the wrong class")
run_arms(
    StreamSpec(
        num_classes=10, embedding_dim=64, num_samples=4000,
        templates_per_class=5, noise_scale=0.1, text_perturbation=1.7,
        shifts=(cyclic_confusion(10, 0.7),), seed=3, min_separation=0.9,
    ),
    n1=30000, n2=20, temperature=30.0,
)

print("\nnote how each arm beats the baseline only on the shift it targets,")
print("and the full algorithm handles both.")

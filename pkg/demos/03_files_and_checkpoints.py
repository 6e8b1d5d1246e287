"""File formats and interrupt/resume round trips.

Writes an embedding stream and a text bank, runs half the stream,
checkpoints, resumes, and verifies the result is bit-identical to an
uninterrupted run.  Ends with a prior-matrix CSV export.
"""

import tempfile
from pathlib import Path

import numpy as np

from bca import AdapterConfig, init_state, step
from bca.embio import (
    export_prior_csv,
    load_state,
    read_embeddings,
    save_state,
    write_embeddings,
)
from bca.synthgen import StreamSpec, make_class_means, make_text_embeddings, sample_stream

workdir = Path(tempfile.mkdtemp(prefix="bca-demo-"))
print(f"working in {workdir}\n")

spec = StreamSpec(num_classes=5, embedding_dim=24, num_samples=600,
                  noise_scale=0.25, seed=21)
means = make_class_means(5, 24, 21, spec.min_separation)
bank = make_text_embeddings(means, 1, 0.0, 21)
stream, labels = sample_stream(spec)

stream_path = workdir / "demo.bcae"
write_embeddings(stream_path, stream, labels, num_classes=5)
header, back, back_labels = read_embeddings(stream_path)
print(f"stream file: {stream_path.stat().st_size} bytes, "
      f"count={header.count}, dim={header.dim}, labeled={header.labeled}")
print(f"round trip exact: {np.array_equal(back, stream.astype(np.float32))}\n")


def fresh():
    return init_state(bank, AdapterConfig(5, 5, 24, tau=0.2,
                                          init_count_embedding=50,
                                          init_count_prior=5,
                                          temperature=50.0))

# continuous run
cont = fresh()
for f in stream:
    step(cont, f)

# interrupted run: 300 steps, checkpoint, resume, 300 more
part = fresh()
for f in stream[:300]:
    step(part, f)
ckpt = workdir / "mid.bcas"
save_state(ckpt, part)
resumed = load_state(ckpt)
for f in stream[300:]:
    step(resumed, f)

print(f"checkpoint: {ckpt.stat().st_size} bytes")
print(f"resumed == continuous, bit for bit: {resumed.equals(cont)}\n")

prior_csv = workdir / "prior.csv"
export_prior_csv(resumed, prior_csv, top_n=3)
print(f"prior export ({prior_csv}):")
print(prior_csv.read_text())

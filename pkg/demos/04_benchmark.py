"""Per-phase timings and whole-step latency at two problem sizes.

The membership phase is O(d*M) and the mixing phase O(K*M), so with
d > K membership dominates; at ImageNet-like size (M = K = 1000, d = 512)
a full step stays comfortably under a millisecond on a desktop CPU.
"""

import numpy as np

from bca import AdapterConfig, init_state
from bca.harness import measure_step_latency, time_phases


def bench(num_classes: int, dim: int, samples: int = 1000):
    rng = np.random.default_rng(np.random.Philox(key=dim * num_classes))
    bank = rng.standard_normal((num_classes, dim))
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    stream = rng.standard_normal((samples, dim))
    stream /= np.linalg.norm(stream, axis=1, keepdims=True)
    state = init_state(
        bank, AdapterConfig(num_classes, num_classes, dim, tau=0.0)
    )
    timings = time_phases(state, stream, repetitions=1)
    median_s, mean_s = measure_step_latency(state, stream, iterations=300)
    print(f"M=K={num_classes}, d={dim}:")
    print(f"  t2 membership  median {timings.membership_median_s * 1e6:9.2f} us")
    print(f"  t3 mixing      median {timings.mixing_median_s * 1e6:9.2f} us")
    print(f"  t4-cal update  median {timings.update_median_s * 1e6:9.2f} us")
    print(f"  t4-rw  write   median {timings.write_median_s * 1e6:9.2f} us")
    print(f"  full step      median {median_s * 1e3:9.4f} ms (mean {mean_s * 1e3:.4f})")


bench(100, 512)
print()
bench(1000, 512)

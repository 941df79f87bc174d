"""Injecting parameterized backdoors into a training set.

An attack replaces a fraction of source-class rows by copies carrying a
trigger pattern, relabeled to the target class; the same trigger is added
to test inputs at evaluation time.  The injected magnitude is exactly what
the certificates later compare against.
"""

import numpy as np

from smoothcert import BackdoorSpec, Dataset, apply_to_test, inject, make_pattern

rng = np.random.default_rng(0)

# a toy image dataset: 200 rows of 8x8 "images", two classes
features = rng.uniform(0.0, 1.0, size=(200, 64))
labels = np.array([0, 1] * 100, dtype=np.int32)
dataset = Dataset(features, labels, 2, (8, 8))

for kind in ("one-pixel", "four-pixel", "blending"):
    spec = BackdoorSpec(kind=kind, l2_norm=0.1, poison_ratio=0.05,
                        source_label=0, target_label=1, pattern_seed=7)
    pattern = make_pattern(spec, dataset.feature_shape)
    print(f"{kind:11s} nonzeros={np.count_nonzero(pattern):3d} "
          f"norm={np.linalg.norm(pattern):.3f}")

spec = BackdoorSpec("four-pixel", l2_norm=0.1, poison_ratio=0.05,
                    source_label=0, target_label=1)
poisoned = inject(dataset, spec, rng_seed=42)
print(f"\npoisoned rows: {poisoned.poisoned_count} of {dataset.n} "
      f"(ratio {spec.poison_ratio})")
print(f"poisoned indices: {poisoned.poisoned_indices[:8]} ...")
print(f"aggregate attack magnitude sqrt(r)*|delta| = {poisoned.attack_l2_total:.4f}")

# rows outside the poisoned set are byte-identical to the originals
mask = np.zeros(dataset.n, dtype=bool)
mask[poisoned.poisoned_indices] = True
untouched = poisoned.dataset.features[~mask].tobytes() == dataset.features[~mask].tobytes()
print(f"un-poisoned rows byte-identical: {untouched}")

# the test-time trigger is the same vector the training rows received
x = dataset.features[3].reshape(8, 8)
triggered = apply_to_test(x, spec)
print(f"trigger norm on a test input: {np.linalg.norm(triggered - x):.3f}")

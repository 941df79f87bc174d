"""Why the Gaussian radius cannot be improved: an executable worst case.

For a binary classifier whose smoothed confidence is exactly (p_a, 1-p_a),
one can construct a concrete base classifier (a likelihood-ratio threshold
along the attack direction) that reproduces those confidences on clean
training data yet flips its smoothed prediction as soon as the training
features shift by more than the certified radius.  Monte-Carlo estimates of
both smoothed probabilities make the construction tangible.
"""

from smoothcert import tightness_witness

print(f"{'p_a':>6} {'sigma':>6} {'radius':>8} {'origin est.':>12} {'shifted est.':>13}")
for p_a, sigma in [(0.7, 1.0), (0.9, 1.0), (0.9, 2.0), (0.99, 0.5)]:
    rep = tightness_witness(p_a, sigma, overshoot=1.01, mc_samples=1_000_000, seed=7)
    print(f"{p_a:6.2f} {sigma:6.1f} {rep.radius:8.4f} "
          f"{rep.origin_estimate:12.5f} {rep.shifted_estimate:13.5f}"
          f"   consistent={rep.origin_consistent} flipped={rep.prediction_flipped}")

print("\nlarger overshoots push the flipped probability toward zero:")
for overshoot in (1.01, 1.5, 3.0, 10.0):
    rep = tightness_witness(0.9, 1.0, overshoot=overshoot, mc_samples=200_000, seed=11)
    print(f"  overshoot {overshoot:5.2f} -> shifted top-class estimate {rep.shifted_estimate:.5f}")

degenerate = tightness_witness(0.5 + 1e-6, 1.0, overshoot=1.01, mc_samples=10_000, seed=1)
print(f"\nnear p_a = 1/2 the radius vanishes and the witness reports itself"
      f" degenerate: radius={degenerate.radius:.2e}, degenerate={degenerate.degenerate}")

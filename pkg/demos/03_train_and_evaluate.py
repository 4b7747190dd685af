"""Train a short SHAC run from a config, then stress it with depth noise.

Uses ``configs/quick.toml`` (about two minutes on one core). Outputs land in
``runs/quick``; a learning-curve SVG is written next to them.

    python3 demos/03_train_and_evaluate.py
"""

from pathlib import Path

from fopgnav.harness import evaluate, load_checkpoint, plot, run_file

here = Path(__file__).parent
res = run_file(here / "configs" / "quick.toml")
print("after training:", res.report.summary())

policy, norm, cfg = load_checkpoint(res.output_dir / "final.fopg")
for sigma in (0.0, 0.5, 1.0, 2.0):
    lv = evaluate(policy, norm, cfg.nav, cfg.eval, episodes=128,
                  noise_levels=(sigma,)).levels[sigma]
    print(f"sigma {sigma:.1f} m: avoidance {lv.avoidance_rate:.3f}, "
          f"tracking error {lv.tracking_error:.3f} m/s")

svg = plot([res.output_dir / "eval.csv"], res.output_dir / "curve.svg", y="avoidance_rate",
           title="avoidance on the benchmark scenes")
print("learning curve:", svg)

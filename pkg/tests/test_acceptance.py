"""Acceptance criteria, one test each.

Criteria 6, 7, 9 and 10 are cheap and always run. Criteria 1 to 5 and 8 need
about 60 full training runs (roughly five hours on one CPU core). They run when
``FOPGNAV_ACCEPTANCE=1`` is set; without it they are evaluated from cached runs
in ``FOPGNAV_ACCEPTANCE_DIR`` (default ``acceptance_runs/`` in the repository)
and skipped if that cache is incomplete.

Running this file as a script executes every criterion and prints one
PASS/FAIL line each::

    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import brute_gae, brute_td_lambda, ema_closed_form  # noqa: E402

from fopgnav.algos import GaussianPolicy, HandAnchor, ShacConfig, gae, td_lambda_targets  # noqa: E402
from fopgnav.algos.fopg import FopgTrainer  # noqa: E402
from fopgnav.diffcore import Tape, Tensor, backward, ops  # noqa: E402
from fopgnav.diffcore.gradcheck import grad_check, numeric_grad  # noqa: E402
from fopgnav.dynamics import BodyState, nose_position  # noqa: E402
from fopgnav.harness import EvalConfig, evaluate, loads, read_csv, run  # noqa: E402
from fopgnav.navenv import OBS_DIM, EmaState, NavConfig, NavEnv, RunningNorm, ema_update  # noqa: E402
from fopgnav.renderer import ObstacleField, pixel_jacobian, render_depth  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("FOPGNAV_ACCEPTANCE_DIR", ROOT / "acceptance_runs"))
LIVE = os.environ.get("FOPGNAV_ACCEPTANCE") == "1"

SEEDS = (0, 1, 2, 3, 4)
FOPG_BUDGET = 400_000
PPO_BUDGET = 50 * FOPG_BUDGET
REACH = 0.99
# a policy that stands still or reverses avoids every post; it must also be driving
MOVING_TE = 0.5

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


# ---------------------------------------------------------------- cached training runs

def config_text(tag: str, seed: int, algorithm="shac", budget=FOPG_BUDGET, rpl=False,
                pinocchio=True, render_grad="none", stop_return=None) -> str:
    lines = [
        f'name = "{tag}"',
        f'algorithm = "{algorithm}"',
        f"rpl = {str(rpl).lower()}",
        f"pinocchio = {str(pinocchio).lower()}",
        f'render_grad = "{render_grad}"',
        f"seed = {seed}",
        f"total_env_steps = {budget}",
        "eval_every = 25600",
        "checkpoint_every = 0",
    ]
    if stop_return is not None:
        # recorded so that a cached run is only reused for the same stopping rule
        lines.append(f"# stop_return = {stop_return!r}")
    lines += ["", "[eval]", "noise_levels = [0.0, 1.0]", ""]
    return "\n".join(lines)


def cached(tag: str, seed: int, **kw) -> Path | None:
    """Output directory of the run, training it first when live; None if unavailable."""
    text = config_text(tag, seed, **kw)
    out = CACHE / tag / f"seed{seed}"
    cfg_file, summary = out / "config.toml", out / "summary.json"
    if summary.exists() and cfg_file.exists() and cfg_file.read_text() == text:
        return out
    if not LIVE:
        return None
    summary.unlink(missing_ok=True)
    run(loads(text), config_text=text, output_dir=out, stop_return=kw.get("stop_return"),
        quiet=True)
    return out


def group(tag: str, **kw) -> list[Path]:
    outs = [cached(tag, s, **kw) for s in SEEDS]
    if any(o is None for o in outs):
        pytest.skip(f"runs for {tag} not cached; set FOPGNAV_ACCEPTANCE=1 to train them")
    return outs


def curve(out: Path) -> dict[str, np.ndarray]:
    return read_csv(out / "eval.csv")


def summary(out: Path) -> dict:
    return json.loads((out / "summary.json").read_text())


def steps_to(out: Path, column: str, level: float) -> float:
    """First logged step count at which ``column`` reaches ``level``; inf if never."""
    c = curve(out)
    hit = np.flatnonzero(c[column] >= level)
    return float(c["env_steps"][hit[0]]) if hit.size else math.inf


def steps_to_avoid(out: Path) -> float:
    """First step count with avoidance at ``REACH`` while tracking within ``MOVING_TE``."""
    c = curve(out)
    hit = np.flatnonzero((c["avoidance_rate"] >= REACH) & (c["tracking_error"] <= MOVING_TE))
    return float(c["env_steps"][hit[0]]) if hit.size else math.inf


def final_return(out: Path) -> float:
    return float(curve(out)["mean_return"][-1])


def sign_test_p(successes: int, n: int) -> float:
    """One-sided P(at least ``successes`` of ``n`` fair coin flips)."""
    return sum(math.comb(n, k) for k in range(successes, n + 1)) / 2 ** n


def fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


# ---------------------------------------------------------------- 1. FoPG convergence

def test_c01_fopg_convergence():
    lines, ok = [], True
    for alg in ("shac", "bptt"):
        reach = [steps_to_avoid(o) for o in group(alg, algorithm=alg)]
        n = sum(r <= FOPG_BUDGET for r in reach)
        ok &= n >= 4
        lines.append(f"{alg} {n}/5 reach {REACH:.0%} (steps {fmt(reach)})")
    record(1, ok, "; ".join(lines))
    assert ok, RESULTS[1]


# ---------------------------------------------------------------- 2. noise robustness

def test_c02_noise_robustness():
    outs = group("shac", algorithm="shac")
    converged = [o for o in outs if steps_to_avoid(o) <= FOPG_BUDGET]
    assert converged, "no converged SHAC run"
    lv = [summary(o)["eval"]["levels"]["1.0"] for o in converged]
    assert all(x["episodes"] >= 512 for x in lv)
    avoid = [x["avoidance_rate"] for x in lv]
    te = [x["tracking_error"] for x in lv]
    ok = all(a >= 0.98 for a in avoid) and all(t <= 0.1 for t in te)
    record(2, ok, f"sigma=1.0 over {len(lv)} converged seeds: avoidance {fmt(avoid)}, "
                  f"tracking error {fmt(te)} m/s")
    assert ok, RESULTS[2]


# ---------------------------------------------------------------- 3. nose ablation

def test_c03_pinocchio_ablation():
    nose = [steps_to_avoid(o) for o in group("shac", algorithm="shac")]
    bare = [steps_to_avoid(o)
            for o in group("shac_nose0", algorithm="shac", pinocchio=False)]
    fails = sum(r > FOPG_BUDGET for r in bare)
    passes = sum(r <= FOPG_BUDGET for r in nose)
    ok = fails >= 4 and passes >= 4
    best = [curve(o)["avoidance_rate"].max()
            for o in group("shac_nose0", algorithm="shac", pinocchio=False)]
    record(3, ok, f"nose 0: {fails}/5 fail to reach {REACH:.0%} (best avoidance {fmt(best)}); "
                  f"nose on: {passes}/5 reach")
    assert ok, RESULTS[3]


# ---------------------------------------------------------------- 4. rendering gradients

def test_c04_render_gradient_parity():
    means = {}
    for mode in ("none", "full", "clipped"):
        tag = "shac" if mode == "none" else f"shac_render_{mode}"
        means[mode] = float(np.mean([final_return(o) for o in
                                     group(tag, algorithm="shac", render_grad=mode)]))
    vals = list(means.values())
    spread = (max(vals) - min(vals)) / max(abs(v) for v in vals)
    ok = spread <= 0.10 and means["full"] <= means["none"] + 0.10 * abs(means["none"])
    record(4, ok, "mean final return " + ", ".join(f"{k} {v:.2f}" for k, v in means.items())
           + f"; relative spread {spread:.3f}")
    assert ok, RESULTS[4]


# ---------------------------------------------------------------- 5. zeroth-order gap

def fopg_target() -> float:
    return float(np.mean([final_return(o) for o in group("shac", algorithm="shac")]))


def test_c05_ppo_gap():
    target = fopg_target()
    best = [curve(o)["mean_return"].max()
            for o in group("ppo", algorithm="ppo", budget=PPO_BUDGET)]
    fails = sum(b < target for b in best)
    ok = fails >= 4
    record(5, ok, f"PPO at {PPO_BUDGET:.0e} steps: {fails}/5 below the SHAC final return "
                  f"{target:.2f} (best {fmt(best)})")
    assert ok, RESULTS[5]


# ---------------------------------------------------------------- 6. gradient correctness

def test_c06_gradient_correctness():
    from test_algos import _fd_check
    from test_diffcore import PRIMITIVES

    x = np.array([0.31, -0.72, 1.13, 0.47, -1.56, 0.94])
    prim = {}
    for name, fn in PRIMITIVES.items():
        if name == "mean":
            fn = lambda t: ops.tsum(ops.mean(ops.square(ops.reshape(t, (2, 3))), axis=0))  # noqa: E731
        prim[name] = grad_check(fn, x, eps=1e-6, floor=1e-6)
    worst_prim = max(prim.values())

    rollout_worst, rollout_norm = _fd_check(8)

    # renderer: per-ray gradients against central differences, rays within 5 degrees of
    # tangency excluded (the depth derivative is unbounded there)
    from test_renderer import _hit_geometry
    field = ObstacleField.from_circles([((4.0, 0.5), 0.8), ((6.0, -2.5), 1.0), ((3.0, 3.0), 0.6)])
    cam = NavConfig().cam
    ray_err, rays = 0.0, 0
    rng = np.random.default_rng(0)
    for _ in range(10):
        x0, y0, h0 = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
        s = BodyState.make(x0, y0, h0)
        jac = pixel_jacobian(s, field, cam, "full")[0]
        base = render_depth(s, field, cam)[0]
        away = _hit_geometry(s, field, cam) > np.sin(np.deg2rad(5))
        for k in np.flatnonzero((base < cam.max_range * 0.999) & away):
            num = numeric_grad(lambda z: render_depth(BodyState.make(*z), field, cam)[0, k],
                               np.array([x0, y0, h0]))
            ray_err = max(ray_err, np.linalg.norm(jac[k] - num) / max(np.linalg.norm(num), 1e-12))
            rays += 1
    assert rays > 100

    nose_err = 0.0
    for h in np.linspace(-7, 7, 57):
        for length in (0.5, 1.0, 2.3):
            for comp, expect in ((0, -length * np.sin(h)), (1, length * np.cos(h))):
                tape = Tape()
                s = BodyState(Tensor(np.zeros(1)), Tensor(np.zeros(1)),
                              tape.watch(np.array([h]), "h"), Tensor(np.zeros(1)),
                              Tensor(np.zeros(1)))
                g = backward(tape, ops.tsum(nose_position(s, length)[comp]))["h"][0]
                nose_err = max(nose_err, abs(g - expect))

    ok = worst_prim < 1e-4 and rollout_worst < 1e-4 and ray_err < 1e-5 and nose_err <= 1e-12
    record(6, ok, f"primitives {worst_prim:.2e}, h=8 rollout {rollout_worst:.2e} "
                  f"(norm-wise {rollout_norm:.2e}), renderer {rays} rays {ray_err:.2e}, "
                  f"nose heading {nose_err:.1e}")
    assert ok, RESULTS[6]


# ---------------------------------------------------------------- 7. residual identity

def test_c07_rpl_identity_and_frozen_anchor():
    from fopgnav.algos import NetAnchor
    from fopgnav.diffcore import Mlp

    cfg = NavConfig()
    norm = RunningNorm(OBS_DIM)
    norm.frozen = True
    results = []
    for anchor in (HandAnchor(cfg.target_speed), NetAnchor(Mlp((2, 16, 2), activation="tanh", seed=3, prefix="anchor/"))):
        pol = GaussianPolicy(anchor=anchor, variance_scale=0.1, seed=7)
        trajs = []
        for actor in (lambda o, r: anchor(r), lambda o, r: pol.mean(o, r)):
            env = NavEnv(cfg, 8, seed=5, obs_norm=norm)
            states = []
            for _ in range(200):
                env.step(actor(env.obs, env.raw_obs_t).data)
                states.append(env.state.numpy())
            trajs.append(np.array(states))
        identical = np.array_equal(trajs[0], trajs[1])
        before = anchor.checksum()
        env = NavEnv(cfg, 8, seed=1)
        tr = FopgTrainer(env, pol, ShacConfig(env_count=8, horizon=8, value_hidden=(16,)),
                         value=None, seed=2)
        unchanged = True
        for _ in range(40):
            tr.step()
            unchanged &= anchor.checksum() == before
        results.append((type(anchor).__name__, identical, unchanged))
    ok = all(i and u for _, i, u in results)
    record(7, ok, "; ".join(f"{n}: trajectory bit-identical {i}, checksum unchanged over 40 "
                            f"iterations {u}" for n, i, u in results))
    assert ok, RESULTS[7]


# ---------------------------------------------------------------- 8. residual benefit

def anchor_return() -> float:
    anchor = HandAnchor(NavConfig().target_speed)
    ecfg = EvalConfig()
    rep = evaluate(lambda o, r: anchor(r), RunningNorm(OBS_DIM), NavConfig(), ecfg,
                   episodes=ecfg.curve_episodes, noise_levels=(0.0,), benchmark_only=True)
    return rep.levels[0.0].mean_return


def test_c08_rpl_benefit():
    scratch = [final_return(o) for o in group("shac", algorithm="shac")]
    rpl = [final_return(o) for o in group("shac_rpl", algorithm="shac", rpl=True)]
    k_shac = sum(a >= b for a, b in zip(rpl, scratch))
    p_shac = sign_test_p(k_shac, len(SEEDS))

    # threshold halfway between the blind anchor and the converged first-order policy
    threshold = round(0.5 * (anchor_return() + fopg_target()), 3)
    vanilla = [steps_to(o, "mean_return", threshold)
               for o in group("ppo", algorithm="ppo", budget=PPO_BUDGET)]
    res = [steps_to(o, "mean_return", threshold)
           for o in group("ppo_rpl", algorithm="ppo", budget=PPO_BUDGET, rpl=True,
                          stop_return=threshold)]
    k_ppo = sum(a < b for a, b in zip(res, vanilla))
    p_ppo = sign_test_p(k_ppo, len(SEEDS))
    ok = p_shac <= 0.05 and p_ppo <= 0.05
    record(8, ok, f"SHAC-RPL >= SHAC on {k_shac}/5 pairs (p={p_shac:.3f}, returns {fmt(rpl)} vs "
                  f"{fmt(scratch)}); PPO-RPL faster to return {threshold:.2f} on {k_ppo}/5 "
                  f"pairs (p={p_ppo:.3f}, steps {fmt(res)} vs {fmt(vanilla)})")
    assert ok, RESULTS[8]


# ---------------------------------------------------------------- 9. oracle equivalences

def test_c09_oracle_equivalences():
    rng = np.random.default_rng(0)
    gae_err = td_err = 0.0
    for _ in range(200):
        T, n = int(rng.integers(1, 12)), int(rng.integers(1, 4))
        r, v, nv = rng.normal(size=(3, T, n))
        d = rng.random((T, n)) < 0.2
        gamma, lam = rng.uniform(0, 1, 2)
        gae_err = max(gae_err, np.abs(gae(r, v, nv, d, gamma, lam)
                                      - brute_gae(r, v, nv, d, gamma, lam)).max())
    for _ in range(200):
        r, nv = rng.normal(size=(2, 5, 3))
        d = rng.random((5, 3)) < 0.2
        gamma, lam = rng.uniform(0, 1, 2)
        td_err = max(td_err, np.abs(td_lambda_targets(r, nv, d, gamma, lam)
                                    - brute_td_lambda(r, nv, d, gamma, lam)).max())
    ema_err = 0.0
    for _ in range(1000):
        alpha = rng.uniform(0.01, 1.0)
        stream = rng.normal(size=(int(rng.integers(1, 60)), 2))
        s = EmaState.zeros(1)
        for v in stream:
            s = ema_update(s, Tensor(v[None]), alpha)
        ema_err = max(ema_err, np.abs(s.y.data[0] - ema_closed_form(stream, alpha)).max())
    ok = gae_err <= 1e-12 and td_err <= 1e-12 and ema_err <= 1e-12
    record(9, ok, f"GAE {gae_err:.1e}, TD-lambda {td_err:.1e}, EMA over 1000 streams "
                  f"{ema_err:.1e}")
    assert ok, RESULTS[9]


# ---------------------------------------------------------------- 10. determinism

def test_c10_determinism(tmp_path):
    same = []
    for alg, extra in (("shac", "[shac]\nenv_count = 8\nhorizon = 8\n"),
                       ("bptt", "[shac]\nenv_count = 8\nhorizon = 8\n"),
                       ("ppo", "[ppo]\nenv_count = 8\nbatch_size = 8\nminibatches = 2\n"
                               "unroll_length = 8\n")):
        for rpl in (False, True):
            text = (f'algorithm = "{alg}"\nrpl = {str(rpl).lower()}\nseed = 5\n'
                    f"total_env_steps = 1024\neval_every = 512\ncheckpoint_every = 0\n"
                    f"{extra}[eval]\nepisodes = 16\ncurve_episodes = 16\n")
            outs = [tmp_path / f"{alg}{rpl}{i}" for i in range(2)]
            for o in outs:
                run(loads(text), config_text=text, output_dir=o, quiet=True)
            same.append(all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
                            for f in ("metrics.csv", "eval.csv")))
    ok = all(same)
    record(10, ok, f"byte-identical metrics.csv and eval.csv for {sum(same)}/{len(same)} "
                   "configs (shac, bptt, ppo, each with and without the residual)")
    assert ok, RESULTS[10]


# ---------------------------------------------------------------- smoke timing

def test_shac_two_hundred_thousand_steps_under_ten_minutes():
    """Training wall clock to 2e5 steps, read back from the cached runs."""
    for out in group("shac", algorithm="shac"):
        m = read_csv(out / "metrics.csv")
        t = read_csv(out / "timing.csv")
        upto = m["iteration"][m["env_steps"] <= 200_000]
        assert t["wall_clock"][np.isin(t["iteration"], upto)].sum() < 600.0


# ---------------------------------------------------------------- script entry point

if __name__ == "__main__":
    os.environ.setdefault("FOPGNAV_ACCEPTANCE", "1")
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)

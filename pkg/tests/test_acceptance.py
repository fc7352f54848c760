"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary under "acceptance criteria".
"""
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.metrics import adjusted_rand_score

from microtrip.analysis import kmeans_fit, stratified_split
from microtrip.cli import main
from microtrip.core import MicroTrip
from microtrip.diffusion import (
    cfg_blend,
    cosine_schedule,
    forward_sample,
    linear_schedule,
    predict_x0,
    reverse_step,
)
from microtrip.fixtures import generate_fixture
from microtrip.markov import backward_messages, fit_second_order, generate_markov, sample_bridge_bins
from microtrip.metrics import (
    SafdHistogram,
    boundary_violation_rate,
    discriminative_score,
    full_report,
    ks_statistic,
    mmd_rbf,
    pooled_speed_accel,
    wasserstein_1d,
    wasserstein_2d_safd,
)
from microtrip.neural.autodiff import parameter
from microtrip.neural.gradcheck import grad_check
from microtrip.neural.losses import (
    PhysicsWeights,
    loss_accel,
    loss_accel_dist,
    loss_jerk,
    loss_simple,
    loss_smooth,
)
from microtrip.neural.models import TransformerConfig, TransformerDenoiser, UNet1D, UNetConfig
from microtrip.neural.train import TrainConfig, evaluate_components, train
from microtrip.postgen import GenerationConfig, generate_diffusion, sample_conditions

from oracles import bridge_marginals, ks_bruteforce, mmd_double_loop, toy_chain, transport_lp

# Window length for the desk-scale diffusion runs; fixtures are capped to fit.
DESK_LEN = 128


def desk_unet():
    return UNet1D(UNetConfig(length=DESK_LEN, widths=(8, 16), attn_levels=(1,), groups=2, heads=1, emb_dim=16), seed=0)


def desk_transformer(d_model=16, d_ff=32):
    return TransformerDenoiser(
        TransformerConfig(length=DESK_LEN, d_model=d_model, n_heads=2, n_layers=1, d_ff=d_ff), seed=0
    )


# ---------------------------------------------------------------- 1


def test_c1_markov_bridge_exactness(verdict):
    start = time.perf_counter()
    m = toy_chain(K=4)
    T, N = 8, 10_000
    exact, _ = bridge_marginals(m.probs, m.start, T)
    rng = np.random.default_rng(2024)
    counts = np.zeros_like(exact)
    for _ in range(N):
        s = sample_bridge_bins(m, T, rng)
        counts[np.arange(T + 1), s] += 1
    tv = float(np.max(0.5 * np.abs(counts / N - exact).sum(axis=1)))

    beta = backward_messages(m, T).beta()
    resid = 0.0
    for t in range(1, T):
        rhs = np.einsum("abc,bc->ab", m.probs, beta[t + 1])
        resid = max(resid, float(np.max(np.abs(beta[t] - rhs))))
    elapsed = time.perf_counter() - start
    ok = tv < 0.02 and resid < 1e-12 and elapsed < 30
    verdict("C1 markov bridge", ok, f"max per-step TV {tv:.4f} (<0.02), residual {resid:.1e} (<1e-12), {elapsed:.1f}s (<30s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_c2_boundary_guarantee(verdict):
    start = time.perf_counter()
    n = 1000
    ds, _ = generate_fixture(120, seed=5, max_duration=DESK_LEN - 1)
    pool = list(ds)
    rates = {}

    m = fit_second_order(pool)
    durations = [pool[i].duration for i in np.random.default_rng(0).integers(0, len(pool), n)]
    rates["markov"] = boundary_violation_rate(generate_markov(m, durations, seed=0))

    for engine, model, sched in (
        ("unet", desk_unet(), linear_schedule(40)),
        ("csdi", desk_transformer(), cosine_schedule(40)),
    ):
        tc = TrainConfig(epochs=1, batch_size=32, learning_rate=1e-3, diffusion_steps=sched.T, schedule=sched.kind)
        train(model, pool, sched, tc, mode=engine)
        gcfg = GenerationConfig.for_engine(engine, batch_size=250)
        conds, _ = sample_conditions(pool, gcfg.boost_speed, gcfg.boost_duration, n, np.random.default_rng(1), engine)
        trips = generate_diffusion(model, sched, conds, engine, gcfg, seed=0)
        assert len(trips) == n
        rates[engine] = boundary_violation_rate(trips)
    elapsed = time.perf_counter() - start
    ok = all(r == 0 for r in rates.values()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.1f}%" for k, v in rates.items())
    verdict("C2 boundary guarantee", ok, f"{detail} over {n} trips each, {elapsed:.0f}s (<300s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_c3_diffusion_algebra(verdict):
    worst = 0.0
    rng = np.random.default_rng(3)
    for sched in (linear_schedule(1000), cosine_schedule(1000), cosine_schedule(200)):
        x0 = rng.standard_normal((4, 64))
        x = forward_sample(x0, sched.T, rng.standard_normal(x0.shape), sched)
        for t in range(sched.T, 0, -1):
            eps = (x - np.sqrt(sched.alpha_bar[t]) * x0) / np.sqrt(1 - sched.alpha_bar[t])
            x = reverse_step(x, t, eps, sched, stochastic=False)
        worst = max(worst, float(np.max(np.abs(x - x0))))
        eps = rng.standard_normal(x0.shape)
        worst = max(worst, float(np.max(np.abs(predict_x0(forward_sample(x0, 17, eps, sched), 17, eps, sched) - x0))))
    lin, cos = linear_schedule(1000), cosine_schedule(1000)
    sched_ok = lin.beta[1] == 1e-4 and lin.beta[-1] == 0.02 and cos.alpha_bar[0] == 1.0
    c, u = rng.standard_normal(50), rng.standard_normal(50)
    cfg_ok = (
        np.array_equal(cfg_blend(c, u, 0.0), c)
        and np.array_equal(cfg_blend(c, u, 2.0), 3.0 * c - 2.0 * u)
        and np.allclose(cfg_blend(c, c, 2.5), c, rtol=0, atol=1e-15)
    )
    ok = worst < 1e-6 and sched_ok and cfg_ok
    verdict(
        "C3 diffusion algebra",
        ok,
        f"inversion max err {worst:.1e} (<1e-6), schedule endpoints exact={sched_ok}, cfg identities exact={cfg_ok}",
    )
    assert ok


# ---------------------------------------------------------------- 4


def test_c4_gradient_correctness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    errs = {}
    v = parameter(rng.uniform(0, 10, (3, 24)) + np.cumsum(rng.normal(0, 3, (3, 24)), axis=1))
    for fn in (loss_smooth, loss_accel, loss_jerk, loss_accel_dist):
        errs[fn.__name__] = grad_check(lambda: fn(v), [v], n_samples=60, h=1e-6)
    h = parameter(rng.standard_normal((2, 16)))
    e = rng.standard_normal((2, 16))
    errs["loss_simple"] = grad_check(lambda: loss_simple(e, h), [h], n_samples=30, h=1e-6)
    tiny = {
        "unet": UNet1D(UNetConfig(length=16, widths=(4, 8), attn_levels=(1,), groups=2, heads=1, emb_dim=8), seed=2),
        "transformer": TransformerDenoiser(TransformerConfig(length=12, d_model=8, n_heads=2, n_layers=1, d_ff=16), seed=2),
    }
    for name, model in tiny.items():
        cfg = model.config
        x = parameter(rng.standard_normal((2, cfg.in_channels, cfg.length)))
        t = np.array([3, 17])
        cond = rng.uniform(0, 1, (2, cfg.cond_dim))
        w = rng.standard_normal(x.data.shape)
        params = dict(model.named_parameters())
        params["input"] = x
        errs[name] = grad_check(lambda: (model(x, t, cond) * w).sum(), params, n_samples=80, h=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(err for err, _ in errs.values())
    enough = all(n >= 10 for _, n in errs.values())
    ok = worst < 1e-3 and enough and elapsed < 120
    verdict("C4 gradient correctness", ok, f"max rel err {worst:.1e} over {len(errs)} targets (<1e-3), {elapsed:.0f}s (<120s)")
    assert ok


# ---------------------------------------------------------------- 5


def _val(x):
    return float(x.data)


def test_c5_physics_kernels(verdict):
    cases = {
        "smooth(linear ramp)": (_val(loss_smooth(3.0 + 2.5 * np.arange(40))), 0.0),
        "accel(capped)": (_val(loss_accel([0, 4, 8, 12, 7, 2, 0])), 0.0),
        "jerk(constant accel)": (_val(loss_jerk(0.75 * np.arange(30) ** 2)), 0.0),
        "accel_dist(sigma 0.5)": (_val(loss_accel_dist([0, 0.5, 0, 0.5, 0, 0.5, 0])), 0.0),
        "smooth unit": (_val(loss_smooth([0, 0, 1])), 1.0),
        "accel unit": (_val(loss_accel([0, 5, 5])), 1.0),
        "brake unit": (_val(loss_accel([6, 0, 0])), 1.0),
        "jerk unit": (_val(loss_jerk([0, 0, 3])), 1.0),
        "accel_dist unit": (_val(loss_accel_dist([0, 1.5, 0, 1.5, 0])), 1.0),
    }
    bad = [k for k, (got, want) in cases.items() if got != want]
    verdict("C5 physics kernels", not bad, "all exact" if not bad else f"inexact: {bad}")
    assert not bad


# ---------------------------------------------------------------- 6


def test_c6_overfit_control(verdict):
    ds, _ = generate_fixture(1, seed=2, max_duration=DESK_LEN - 1)
    trip = list(ds)
    sched = cosine_schedule(50)
    tc = TrainConfig(
        epochs=200,
        batch_size=32,
        learning_rate=1e-2,
        cond_dropout=0.0,
        weights=PhysicsWeights(0, 0, 0, 0),
        diffusion_steps=50,
        seed=0,
    )
    start = time.perf_counter()
    hist = train(desk_transformer(32, 64), trip, sched, tc).history
    elapsed = time.perf_counter() - start
    ratio = hist[-1]["mse"] / hist[0]["mse"]
    again = train(desk_transformer(32, 64), trip, sched, replace(tc, epochs=5)).history
    deterministic = again == hist[:5]
    ok = ratio < 0.05 and deterministic
    verdict(
        "C6 overfit control",
        ok,
        f"final/first L_simple {ratio:.4f} (<0.05), history reproducible={deterministic}, {elapsed:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 7


def test_c7_physics_weight_band(verdict):
    ds, _ = generate_fixture(24, seed=7, max_duration=DESK_LEN - 1)
    trips = list(ds)
    sched = cosine_schedule(50)
    tc = TrainConfig(epochs=60, batch_size=24, learning_rate=3e-3, physics_min_alpha_bar=0.5, diffusion_steps=50)
    model = desk_transformer(32, 64)
    train(model, trips, sched, tc)
    comps = evaluate_components(model, trips, sched, tc, n_draws=8)
    mse = comps["mse"]
    weighted = {k: getattr(tc.weights, k) * comps[k] for k in ("smooth", "accel", "jerk", "accel_dist")}
    ratios = {k: (mse / v if v > 0 else math.inf) for k, v in weighted.items()}
    ok = all(20 <= r <= 200 for r in ratios.values())
    detail = ", ".join(f"{k} {r:.3g}x" for k, r in ratios.items())
    verdict("C7 physics-weight band", ok, f"L_MSE / weighted component: {detail} (band 20-200x)")
    assert ok


# ---------------------------------------------------------------- 8


def _grid_hist(mass):
    edges = np.arange(5, dtype=float)
    m = np.asarray(mass, float)
    return SafdHistogram(m / m.sum(), edges, edges)


def test_c8_metric_oracles(verdict):
    rng = np.random.default_rng(88)
    w1_err = 0.0
    ks_err = 0.0
    mmd_err = 0.0
    for _ in range(10):
        a, b = rng.normal(0, 3, 20), rng.exponential(2, 20)
        wa, wb = rng.uniform(0.1, 1, 20), rng.uniform(0.1, 1, 20)
        lp = transport_lp(a, b, wa, wb, lambda x, y: abs(x - y))
        w1_err = max(w1_err, abs(wasserstein_1d(a, b, wa, wb) - lp))
        ks_err = max(ks_err, abs(ks_statistic(a, b) - ks_bruteforce(a, b)))
        x, y = rng.standard_normal((60, 3)), rng.standard_normal((50, 3)) + 0.3
        want = mmd_double_loop(x.tolist(), y.tolist(), 1.0)
        mmd_err = max(mmd_err, abs(mmd_rbf(x, y, 1.0) - want) / max(abs(want), 1e-300))

    safd_rel = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        ha, hb = _grid_hist(r.uniform(0, 1, (4, 4))), _grid_hist(r.uniform(0, 1, (4, 4)))
        pts = ha.centers()
        lp = transport_lp(pts, pts, ha.mass.ravel(), hb.mass.ravel(), lambda p, q: float(np.linalg.norm(p - q)))
        safd_rel.append(abs(wasserstein_2d_safd(ha, hb) - lp) / lp)
    safd_worst = max(safd_rel)
    checks = {
        "w1": w1_err < 1e-9,
        "mmd": mmd_err < 1e-12,
        "ks": ks_err == 0,
        "safd": safd_worst <= 0.15,
    }
    ok = all(checks.values())
    verdict(
        "C8 metric oracles",
        ok,
        f"W1 vs LP {w1_err:.1e} (<1e-9), MMD rel {mmd_err:.1e} (<1e-12), KS diff {ks_err:g} (0), "
        f"sliced SAFD worst rel gap {safd_worst:.3f} over 10 4x4 grids (<=0.15)",
    )
    assert ok


# ---------------------------------------------------------------- 9


def _shift(trips, dv):
    out = []
    for t in trips:
        v = t.speeds.copy()
        v[1:-1] += dv
        out.append(MicroTrip.from_speeds(v))
    return out


def test_c9_self_comparison(verdict):
    # evaluation-set sized sample (the 20% side of the 6,367-trip split)
    ds, _ = generate_fixture(1273, seed=9, max_duration=600)
    real = list(ds)
    boot = [real[i] for i in np.random.default_rng(0).integers(0, len(real), len(real))]
    rep = full_report(real, boot, seed=0)
    disc_shift = discriminative_score(real, _shift(real, 20.0), seed=0)
    # "approximately zero" is judged against the spread of the real sample
    v, a = pooled_speed_accel(real)
    sv, sa = float(np.std(v)), float(np.std(a))
    checks = {
        "wd_speed": rep.wd_speed <= 0.05 * sv,
        "wd_accel": rep.wd_accel <= 0.05 * sa,
        "mmd": rep.mmd <= 1e-6,
        "disc": 0.45 <= rep.discriminative_score <= 0.55,
        "shift": disc_shift > 0.95,
    }
    ok = all(checks.values())
    verdict(
        "C9 self-comparison",
        ok,
        f"WD speed {rep.wd_speed / sv:.3f} sd, WD accel {rep.wd_accel / sa:.3f} sd (<=0.05 sd each), MMD {rep.mmd:.2g} (<=1e-6), "
        f"disc {rep.discriminative_score:.3f} ([0.45,0.55]), shifted disc {disc_shift:.3f} (>0.95)",
    )
    assert ok


# ---------------------------------------------------------------- 10


def test_c10_clustering(verdict):
    rng = np.random.default_rng(10)
    centers = np.array([[0, 0, 0, 0, 0, 0], [8, 0, 0, 8, 0, 0], [0, 8, 0, 0, 8, 0], [0, 0, 8, 0, 0, 8]], float)
    X = np.concatenate([c + rng.standard_normal((60, 6)) for c in centers])
    y = np.repeat(np.arange(4), 60)
    ari = adjusted_rand_score(y, kmeans_fit(X, 4, seed=0).assignments)

    labels = rng.choice(4, size=6367, p=[0.35, 0.16, 0.1, 0.39])
    tr, te = stratified_split(labels, 0.8, seed=0)
    worst = max(abs(int(np.sum(labels[tr] == c)) - 0.8 * int(np.sum(labels == c))) for c in range(4))
    ok = ari > 0.9 and worst <= 1 and abs(len(tr) - 5094) <= 1 and abs(len(te) - 1273) <= 1
    verdict(
        "C10 clustering",
        ok,
        f"ARI {ari:.3f} (>0.9), worst per-cluster deviation {worst:.1f} trips (<=1), split {len(tr)}/{len(te)} (5094/1273 +-1)",
    )
    assert ok


# ---------------------------------------------------------------- 11

PIPE_CONFIG = {
    "csdi": {
        "architecture": {"length": 512, "d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32},
        "diffusion_steps": 50,
        "epochs": 2,
        "learning_rate": 0.001,
    },
    "unet": {
        "architecture": {"length": 512, "widths": [8, 16], "attn_levels": [1], "groups": 2, "heads": 1, "emb_dim": 16},
        "diffusion_steps": 50,
        "epochs": 2,
        "learning_rate": 0.001,
    },
}


def _pipeline(root: Path):
    root.mkdir(parents=True)
    cfg = root / "run.json"
    cfg.write_text(json.dumps(PIPE_CONFIG))
    c = ["--config", str(cfg)]
    r = lambda *a: str(root / Path(*a))  # noqa: E731
    steps = [
        ["fixture", "--n", "200", "--seed", "0", "--out", r("traces.csv")],
        ["ingest", "--input", r("traces.csv"), "--output", r("all.ds"), "--summary", r("summary.csv")],
        ["cluster", "--dataset", r("all.ds"), "--out", r("clusters.json"), "--projections", r("proj.csv"),
         "--report", r("clusters.csv"), "--train-out", r("train.ds"), "--test-out", r("test.ds"),
         "--conditions-out", r("cond.csv")],
        ["fit-markov", "--train", r("train.ds"), "--out", r("markov.json")],
        ["train", "--train", r("train.ds"), "--engine", "unet", "--out", r("ckpt", "unet")],
        ["train", "--train", r("train.ds"), "--engine", "csdi", "--out", r("ckpt", "csdi")],
    ]
    for engine in ("markov", "unet", "csdi"):
        src = ["--model", r("markov.json")] if engine == "markov" else ["--checkpoint", r("ckpt", engine)]
        steps.append(["generate", "--engine", engine, *src, "--conditions", r("cond.csv"), "--out", r(f"synth_{engine}.ds")])
        steps.append(["evaluate", "--real", r("test.ds"), "--synth", r(f"synth_{engine}.ds"), "--tstr-train",
                      r("train.ds"), "--out", r(f"eval_{engine}.json"), "--csv", r(f"eval_{engine}.csv")])
    steps.append(["report", "--report", r("eval_csdi.json"), "--real", r("test.ds"), "--synth", r("synth_csdi.ds"),
                  "--plots", "--out-dir", r("rep")])
    codes = [main(c + s) for s in steps]
    return codes


def _snapshot(root: Path):
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        data = p.read_bytes()
        if p.name.endswith(".manifest.json"):
            man = json.loads(data)
            man.pop("wall_time_s")
            data = json.dumps(man, sort_keys=True).encode()
        out[str(p.relative_to(root))] = data
    return out


def test_c11_end_to_end_determinism(verdict, tmp_path):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        codes_a = _pipeline(tmp_path / "a")
        elapsed = time.perf_counter() - t0
        codes_b = _pipeline(tmp_path / "b")
    snap_a, snap_b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    differing = sorted(k for k in snap_a if snap_a[k] != snap_b.get(k))
    ok = codes_a == codes_b == [0] * len(codes_a) and snap_a.keys() == snap_b.keys() and not differing
    ok = ok and elapsed < 600
    verdict(
        "C11 end-to-end determinism",
        ok,
        f"{len(codes_a)} commands, {len(snap_a)} files byte-identical across runs (differing: {differing or 'none'}), "
        f"single run {elapsed:.0f}s single-threaded (<600s)",
    )
    assert ok

"""Acceptance criteria 1-9.

Each test prints one ``[criterion N] PASS|FAIL`` line with its measured
quantities and runtime; the lines are repeated in the pytest summary.
"""

import json
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from evidential_osr import cli
from evidential_osr.beta_evidential import beta_loss_grad, beta_loss_terms, dirichlet_binary_loss
from evidential_osr.convex_suite import active_quadratic, default_suite
from evidential_osr.datagen import generate_dataset
from evidential_osr.hsic import hsic, hsic_grad, median_bandwidth, permutation_null
from evidential_osr.metrics import ScoredSet, binary_curve_metrics
from evidential_osr.model import Architecture, NetworkParams, backward, forward, init_params, objective, train
from evidential_osr.numerics import RandomStream, derive_seed
from evidential_osr.optimizer import check_prop1, check_prop2_bounds, run_constrained
from evidential_osr.subjective_logic import novelty_score_arrays, opinion_arrays


def verdict(n, ok, budget, elapsed, detail):
    ok = bool(ok) and elapsed < budget
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f}s, budget {budget:.0f}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def central(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_criterion_1_beta_dirichlet_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    a = rng.uniform(1, 100, 100_000)
    b = rng.uniform(1, 100, 100_000)
    y = rng.integers(0, 2, 100_000)
    beta_side = beta_loss_terms(a[:, None], b[:, None], y[:, None])[:, 0]
    worst = float(np.max(np.abs(beta_side - dirichlet_binary_loss(a, b, y))))
    assert verdict(1, worst < 1e-12, 5, time.perf_counter() - t0, f"max |diff| = {worst:.2e} over 1e5 draws")


def _beta_grad_errors(rng, count):
    errs = []
    h = 1e-5
    for _ in range(count):
        a, b, y = rng.uniform(1.05, 100), rng.uniform(1.05, 100), int(rng.integers(0, 2))
        da, db = beta_loss_grad([[a]], [[b]], [[y]])
        fa = central(lambda t: beta_loss_terms(np.array([[t]]), np.array([[b]]), np.array([[y]]))[0, 0], a, h)
        fb = central(lambda t: beta_loss_terms(np.array([[a]]), np.array([[t]]), np.array([[y]]))[0, 0], b, h)
        errs.append(max(abs(fa - da[0, 0]) / abs(da[0, 0]), abs(fb - db[0, 0]) / abs(db[0, 0])))
    return max(errs)


def _hsic_grad_errors(rng, count):
    errs = []
    h = 1e-6
    for _ in range(count):
        Z, X = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
        sz, sx = median_bandwidth(Z), median_bandwidth(X)
        g = hsic_grad(Z, X, sz, sx)
        fd = np.zeros_like(Z)
        for idx in np.ndindex(Z.shape):
            Zp, Zm = Z.copy(), Z.copy()
            Zp[idx] += h
            Zm[idx] -= h
            fd[idx] = (hsic(Zp, X, sz, sx, clamp=False) - hsic(Zm, X, sz, sx, clamp=False)) / (2 * h)
        errs.append(np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    return max(errs)


def _model_grad_errors(seed, count):
    errs = []
    ctx = [4, 5]
    h = 1e-6
    for i in range(count):
        rng = RandomStream(derive_seed(seed, i))
        hidden = ((), (5,), (5, 4))[i % 3]
        arch = Architecture(d_in=6, hidden=hidden, K=3)
        p = init_params(arch, rng)
        p = NetworkParams(arch, p.weights, [b + rng.normal(scale=0.3, size=b.shape) for b in p.biases])
        X, Y = rng.normal(size=(8, 6)), rng.integers(0, 2, size=(8, 3))
        lam = float(rng.uniform(0.1, 5.0))
        fr = forward(p, X, ctx)
        bw = (median_bandwidth(fr.z_matrix), median_bandwidth(fr.pooled_context))
        g = backward(p, fr, Y, lam, gamma=0.001, delta=0.01, bandwidths=bw)
        theta = p.flatten()
        fd = np.zeros_like(theta)
        for k in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            fp = objective(NetworkParams.unflatten(arch, tp), X, Y, ctx, lam, 0.001, 0.01, bandwidths=bw)
            fm = objective(NetworkParams.unflatten(arch, tm), X, Y, ctx, lam, 0.001, 0.01, bandwidths=bw)
            fd[k] = (fp - fm) / (2 * h)
        errs.append(np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    return max(errs)


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    e_beta = _beta_grad_errors(rng, 100)
    e_hsic = _hsic_grad_errors(rng, 60)
    e_model = _model_grad_errors(203, 60)
    ok = e_beta < 1e-6 and e_hsic < 1e-5 and e_model < 1e-4
    detail = f"max rel err beta {e_beta:.1e} (<1e-6), hsic {e_hsic:.1e} (<1e-5), model {e_model:.1e} (<1e-4)"
    assert verdict(2, ok, 60, time.perf_counter() - t0, detail)


def test_criterion_3_violation_certificates():
    t0 = time.perf_counter()
    cases = [c for c in default_suite(1000) if c.certify_bounds]
    names, ok, worst = [], True, {}
    for case in cases:
        tr = run_constrained(case.problem, case.config)
        m = len(tr) - 1
        rep = check_prop2_bounds(tr, case.problem)
        viol = max(tr.constraint_avg[-1] - tr.gamma, 0.0)
        ratio = tr.lam[-1] / (m * tr.eta2)
        ok &= m >= 1000 and rep.passed and viol < 1e-3 and ratio < 1e-3
        names.append(case.problem.name)
        worst[case.problem.name] = (rep.passed, viol, ratio)
    aq = active_quadratic()
    ok &= aq.f_star == 1.0 and aq.lambda_star == 2.0 and len(cases) >= 3
    detail = "; ".join(f"{k}: bounds {'held' if v[0] else 'broken'}, [g]+ {v[1]:.1e}, lam/(m eta2) {v[2]:.1e}"
                       for k, v in worst.items())
    assert verdict(3, ok, 30, time.perf_counter() - t0, detail)


def test_criterion_4_average_certificate():
    t0 = time.perf_counter()
    ok, rec, excess = True, 0.0, -np.inf
    suite = default_suite(1000)
    for case in suite:
        rep = check_prop1(run_constrained(case.problem, case.config), case.problem.G)
        ok &= rep.passed and rep.recurrence_max_error <= 1e-12 and rep.max_slack <= 0
        rec = max(rec, rep.recurrence_max_error)
        excess = max(excess, rep.max_slack)
    detail = f"{len(suite)} traces, recurrence err {rec:.1e} (<=1e-12), max of |step| - 2G/(m+1) {excess:.2e} (<=0)"
    assert verdict(4, ok, 10, time.perf_counter() - t0, detail)


def test_criterion_5_subjective_logic_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    alpha, beta = rng.uniform(1, 100, 10_000), rng.uniform(1, 100, 10_000)
    b, d, u, p = opinion_arrays(alpha, beta, W=2, a=0.5)
    add_err = float(np.max(np.abs(b + d + u - 1)))
    p_err = float(np.max(np.abs(p - alpha / (alpha + beta))))

    # ranges on evidence small enough that the open ends are representable
    A, B = rng.uniform(1, 5, (10_000, 4)), rng.uniform(1, 5, (10_000, 4))
    s = novelty_score_arrays(A, B)
    ranges = (np.all((s["PE"] > 0) & (s["PE"] <= 1)) and np.all((s["NE"] >= 0) & (s["NE"] < 1))
              and np.all((s["PNE"] > 0) & (s["PNE"] <= 1)))
    bump = rng.uniform(0.01, 0.5, A.shape)
    more_a, more_b = novelty_score_arrays(A + bump, B), novelty_score_arrays(A, B + bump)
    mono = (np.all(more_a["PE"] < s["PE"]) and np.all(more_b["NE"] > s["NE"])
            and np.all(more_a["PNE"] < s["PNE"]) and np.all(more_b["PNE"] < s["PNE"]))
    ok = add_err < 1e-12 and p_err < 1e-12 and ranges and mono
    detail = f"b+d+u err {add_err:.1e}, p err {p_err:.1e}, ranges {'ok' if ranges else 'broken'}, " \
             f"monotonicity {'ok' if mono else 'broken'}"
    assert verdict(5, ok, 5, time.perf_counter() - t0, detail)


def test_criterion_6_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 501))
        t = rng.integers(0, 2, n)
        t[:2] = [0, 1]
        s = np.round(rng.normal(size=n) + 0.5 * t, 1)
        pos, neg = s[t == 1], s[t == 0]
        diff = pos[:, None] - neg[None, :]
        brute = float(np.mean((diff > 0) + 0.5 * (diff == 0)))
        worst = max(worst, abs(binary_curve_metrics(ScoredSet(s, t)).auroc - brute))
    truths = np.array([1] * 40 + [0] * 60)
    perfect = binary_curve_metrics(ScoredSet(truths.astype(float), truths))
    reversed_ = binary_curve_metrics(ScoredSet(-truths.astype(float), truths))
    ok = (worst < 1e-9 and perfect.auroc == 1.0 and reversed_.auroc == 0.0
          and perfect.fpr_at_95tpr == 0.0 and perfect.tpr_at_operating == 1.0 and perfect.detection_error == 0.0)
    detail = f"max |AUROC - concordance| {worst:.1e}, perfect {perfect.auroc}, reversed {reversed_.auroc}, " \
             f"DE at FPR 0 / TPR 1 = {perfect.detection_error}"
    assert verdict(6, ok, 30, time.perf_counter() - t0, detail)


def test_criterion_7_hsic_sanity():
    t0 = time.perf_counter()
    rng = RandomStream(707)
    X = rng.normal(size=(64, 3))
    const_zero = hsic(np.ones((64, 2)), X) == 0.0
    Z = rng.normal(size=(64, 2))
    sym = abs(hsic(Z, X) - hsic(X, Z)) < 1e-12
    hits = 0
    for trial in range(100):
        r = rng.spawn(trial)
        x = r.uniform(-3, 3, size=(128, 1))
        z = np.sin(x) + 0.1 * r.normal(size=(128, 1))
        hits += hsic(z, x) > np.percentile(permutation_null(z, x, 200, r), 99)
    ok = const_zero and sym and hits >= 95
    detail = f"constant-Z zero {const_zero}, symmetric {sym}, sine detected in {hits}/100 (>=95)"
    assert verdict(7, ok, 120, time.perf_counter() - t0, detail)


def _train_eval(cfg, ds, debias):
    cfg = json.loads(json.dumps(cfg))
    cfg["optimizer"]["debias"] = debias
    params, trace = train(cli.train_config(cfg), ds, RandomStream(derive_seed(cfg["seed"], cli.TRAIN_STREAM)))
    return cli.evaluate(cfg, params, ds), trace


@pytest.mark.slow
def test_criterion_8_end_to_end_debiasing():
    t0 = time.perf_counter()
    cfg = cli.load_config(None, ["seed=0"])
    gen = cli.gen_config(cfg)
    assert (gen.classes_per_subset, gen.bias_strength, gen.samples_train, gen.samples_test) == (6, 0.9, 4000, 1000)
    assert cfg["optimizer"]["gamma"] == 0.001
    ds = generate_dataset(gen)
    on, tr_on = _train_eval(cfg, ds, True)
    off, tr_off = _train_eval(cfg, ds, False)
    pe_on = next(r["auroc"] for r in on["open_set"] if r["mechanism"] == "PE")
    pe_off = next(r["auroc"] for r in off["open_set"] if r["mechanism"] == "PE")
    ok_a = pe_on >= 0.80
    ok_b = pe_on >= pe_off - 0.01 and on["test_hsic"] < off["test_hsic"]
    assert max(tr_off.lam) == 0.0 and max(tr_on.lam) > 0.0
    detail = (f"(a) PE AUROC on {pe_on:.4f} (>=0.80); (b) off {pe_off:.4f}, "
              f"test HSIC on {on['test_hsic']:.2e} vs off {off['test_hsic']:.2e}")
    assert verdict(8, ok_a and ok_b, 180, time.perf_counter() - t0, detail)


@pytest.mark.slow
def test_criterion_9_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    ov = []
    for key, name in (("data_dir", "data"), ("checkpoint", "model.json"), ("trace", "trace.csv"),
                      ("metrics", "metrics.json")):
        ov += ["--set", f"paths.{key}={json.dumps(str(tmp_path / name))}"]
    docs = []
    for _ in range(2):
        for cmd in ("generate", "train", "eval"):
            assert cli.main([cmd, "--set", "seed=7"] + ov) == 0
        docs.append((tmp_path / "metrics.json").read_bytes())
    same = docs[0] == docs[1]
    detail = f"metrics JSON byte-identical across two generate/train/eval runs: {same}"
    assert verdict(9, same, 180, time.perf_counter() - t0, detail)

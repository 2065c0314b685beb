"""Experiment harness: model zoos, attack matrices, sweeps, timing, reports.

The default desk protocol trains an mlp_a surrogate and two differently
seeded targets (mlp_b, cnn_a) on the synthetic oriented-grating task, attacks
the first 200 test images with each configured method over several attack
seeds, and reports transfer success rates (percent misclassified by each
target).  Every report embeds the full configuration and master seed; reruns
reproduce all report files byte-identically.

Adversarial examples persist in the "PGNA" container: magic, little-endian
u32 version, JSON header (method, label, budget, per-iteration records),
then the original and adversarial tensors as little-endian float32.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import platform
import struct
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks, data, flatness, models
from .attacks import AdvResult, AttackBudget, BaselineParams, IterRecord, PgnParams
from .errors import FormatError, LengthError, UsageError
from .hvp import EvalCounter, FdConfig, full_hessian

PGNA_MAGIC = b"PGNA"
PGNA_VERSION = 1

METHODS = ("ifgsm", "mifgsm", "nifgsm", "vmi", "emi", "pgn",
           "reg-ifgsm", "reg-mifgsm")

DEFAULT_CONFIG = {
    "master_seed": 2024,
    "attack_seeds": 5,
    "data_seed": 7,
    "n_classes": 4,
    "side": 16,
    "n_per_class": 500,
    "test_per_class": 100,
    "noise_sd": 0.15,
    "epochs": 10,
    "batch_size": 32,
    "lr": 0.05,
    "momentum": 0.9,
    "surrogate": "mlp_a",
    "surrogate_seed": 11,
    "targets": "mlp_b,cnn_a",
    "target_seeds": "22,33",
    "eps": 16.0 / 255.0,
    "steps": 10,
    "mu": 1.0,
    "delta": 0.5,
    "zeta_factor": 3.0,
    "samples": 20,
    "fd_step": None,
    "vmi_samples": 20,
    "vmi_beta_factor": 1.5,
    "emi_samples": 11,
    "emi_eta": 7.0,
    "methods": "ifgsm,mifgsm,nifgsm,vmi,emi,reg-mifgsm,pgn",
    "n_eval": 200,
    "transform": "none",
    "dim_p": 0.5,
    "dim_max_scale": 1.33,
    "sim_copies": 5,
    "jobs": 1,
    "with_flatness": True,
    "flatness_samples": 32,
    "with_timing": False,
    "timing_images": 32,
}


def resolve_config(user=None):
    user = dict(user or {})
    unknown = sorted(set(user) - set(DEFAULT_CONFIG))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {**DEFAULT_CONFIG, **user}
    for name in ("methods",):
        for m in _csv_list(cfg[name]):
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r} (known: {', '.join(METHODS)})")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _csv_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def example_rng(master_seed, index, lane=0):
    """Private RNG stream for one example, split from the master seed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), int(lane), int(index)]))


def budget_from(cfg):
    return AttackBudget(eps=float(cfg["eps"]), steps=int(cfg["steps"]),
                        decay=float(cfg["mu"]))


def pgn_params_from(cfg):
    return PgnParams(delta=float(cfg["delta"]),
                     zeta_factor=float(cfg["zeta_factor"]),
                     samples=int(cfg["samples"]))


def baseline_params_from(cfg):
    return BaselineParams(vmi_samples=int(cfg["vmi_samples"]),
                          vmi_beta_factor=float(cfg["vmi_beta_factor"]),
                          emi_samples=int(cfg["emi_samples"]),
                          emi_eta=float(cfg["emi_eta"]))


def fd_config_from(cfg, budget):
    step = cfg.get("fd_step")
    return FdConfig(fd_step=float(step) if step else budget.step_size, norm="l1")


# ---- protocol: data + model zoo ---------------------------------------------


@dataclass
class Protocol:
    config: dict
    train_data: data.Dataset
    test_data: data.Dataset
    surrogate: models.Classifier
    targets: list
    eval_images: np.ndarray
    eval_labels: np.ndarray


def build_protocol(cfg):
    """Generate data, train the zoo, pick the evaluation set."""
    cfg = resolve_config(cfg)
    train_data = data.gen_synthetic(cfg["n_classes"], cfg["side"],
                                    cfg["n_per_class"], cfg["noise_sd"],
                                    cfg["data_seed"], split="train")
    test_data = data.gen_synthetic(cfg["n_classes"], cfg["side"],
                                   cfg["test_per_class"], cfg["noise_sd"],
                                   cfg["data_seed"] + 1, split="test")
    if cfg["n_eval"] > len(test_data):
        raise UsageError(f"n_eval={cfg['n_eval']} exceeds test set size "
                         f"{len(test_data)}")

    def _train(arch_name, seed):
        arch = models.ARCHITECTURES[arch_name](test_data.image_shape,
                                               cfg["n_classes"])
        tc = models.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                                lr=cfg["lr"], momentum=cfg["momentum"], seed=seed)
        return models.train(arch, train_data, tc, test_data=test_data)

    surrogate = _train(cfg["surrogate"], int(cfg["surrogate_seed"]))
    target_names = _csv_list(cfg["targets"])
    target_seeds = [int(s) for s in _csv_list(cfg["target_seeds"])]
    if len(target_names) != len(target_seeds):
        raise UsageError("targets and target_seeds must have the same length")
    targets = [_train(n, s) for n, s in zip(target_names, target_seeds)]
    sel = slice(0, int(cfg["n_eval"]))
    return Protocol(cfg, train_data, test_data, surrogate, targets,
                    test_data.images[sel], test_data.labels[sel])


# ---- attack dispatch ---------------------------------------------------------


def run_attack(method, model_or_models, x, y, budget, pgn_params=None,
               baseline_params=None, fd=None, rng=None, transform="none", **tkw):
    """Run one attack method on one example."""
    pgn_params = pgn_params or PgnParams()
    baseline_params = baseline_params or BaselineParams()
    if method == "ifgsm":
        return attacks.ifgsm(model_or_models, x, y, budget, transform, rng, **tkw)
    if method == "mifgsm":
        return attacks.mifgsm(model_or_models, x, y, budget, transform, rng, **tkw)
    if method == "nifgsm":
        return attacks.nifgsm(model_or_models, x, y, budget, transform, rng, **tkw)
    if method == "vmi":
        return attacks.vmifgsm(model_or_models, x, y, budget, baseline_params,
                               rng, transform, **tkw)
    if method == "emi":
        return attacks.emifgsm(model_or_models, x, y, budget, baseline_params,
                               transform, rng, **tkw)
    if method == "pgn":
        return attacks.pgn(model_or_models, x, y, budget, pgn_params, fd, rng,
                           transform, **tkw)
    if method in ("reg-ifgsm", "reg-mifgsm"):
        base = method.split("-", 1)[1]
        return attacks.regularized_attack(
            base, model_or_models, x, y, budget,
            lam=pgn_params.delta * budget.step_size,
            zeta=pgn_params.zeta(budget), rng=rng, transform=transform, **tkw)
    raise UsageError(f"unknown method {method!r}")


_POOL_STATE = {}


def _pool_init(payload):
    _POOL_STATE["payload"] = payload


def _pool_attack(index):
    p = _POOL_STATE["payload"]
    rng = example_rng(p["master_seed"], index)
    return run_attack(p["method"], p["models"], p["images"][index],
                      int(p["labels"][index]), p["budget"], p["pgn_params"],
                      p["baseline_params"], p["fd"], rng, p["transform"],
                      **p["tkw"])


def attack_batch(method, model_or_models, images, labels, budget, master_seed,
                 pgn_params=None, baseline_params=None, fd=None,
                 transform="none", jobs=1, **tkw):
    """Attack every example; per-example RNG streams are split from the master
    seed so the result is identical for any ``jobs`` value."""
    payload = {"method": method, "models": model_or_models, "images": images,
               "labels": labels, "budget": budget,
               "pgn_params": pgn_params or PgnParams(),
               "baseline_params": baseline_params or BaselineParams(),
               "fd": fd, "transform": transform, "master_seed": master_seed,
               "tkw": tkw}
    indices = range(len(images))
    if jobs <= 1:
        _pool_init(payload)
        return [_pool_attack(i) for i in indices]
    with multiprocessing.Pool(processes=jobs, initializer=_pool_init,
                              initargs=(payload,)) as pool:
        return pool.map(_pool_attack, indices, chunksize=8)


# ---- transfer evaluation -----------------------------------------------------


@dataclass
class TransferMatrix:
    """Attack-method by target-model success-rate table (percent)."""

    methods: list
    model_names: list
    rates: np.ndarray            # (n_methods, n_models)
    sample_count: int
    surrogate: str = ""
    whitebox: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def rate(self, method, model_name):
        return float(self.rates[self.methods.index(method),
                                self.model_names.index(model_name)])

    def to_csv(self):
        header = ["method"]
        for name, wb in zip(self.model_names, self.whitebox):
            header.append(name + ("*" if wb else ""))
        lines = [",".join(header)]
        for i, m in enumerate(self.methods):
            cells = [m] + [f"{self.rates[i, j]:.4f}"
                           for j in range(len(self.model_names))]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def transfer_eval(advs, targets, surrogate_name=""):
    """Success rates: the fraction of adversarial examples each target
    misclassifies, as a percentage.  All results must share one budget."""
    if not advs or not targets:
        raise UsageError("transfer_eval needs adversarial examples and targets")
    budget = advs[0].budget
    for a in advs:
        if a.budget != budget:
            raise UsageError("all adversarial examples must share one budget")
    by_method = {}
    for a in advs:
        by_method.setdefault(a.method, []).append(a)
    methods = list(by_method)
    names = [t.name for t in targets]
    rates = np.zeros((len(methods), len(targets)))
    counts = {len(v) for v in by_method.values()}
    for i, m in enumerate(methods):
        xs = np.stack([a.adv for a in by_method[m]])
        ys = np.array([a.label for a in by_method[m]])
        for j, t in enumerate(targets):
            rates[i, j] = float(np.mean(t.predict(xs) != ys) * 100.0)
    return TransferMatrix(methods, names, rates, sample_count=min(counts),
                          surrogate=surrogate_name,
                          whitebox=[n == surrogate_name for n in names],
                          metadata={"budget_eps": budget.eps,
                                    "budget_steps": budget.steps})


def mean_matrix(matrices):
    """Mean and standard deviation across per-seed matrices."""
    first = matrices[0]
    stack = np.stack([m.rates for m in matrices])
    mean = stack.mean(axis=0)
    sd = stack.std(axis=0)
    meta = dict(first.metadata)
    meta["n_seeds"] = len(matrices)
    out = TransferMatrix(first.methods, first.model_names, mean,
                         first.sample_count, first.surrogate, first.whitebox, meta)
    out.metadata["sd"] = sd
    return out


def run_transfer(protocol, methods=None, seeds=None):
    """Attack the evaluation set for each method and seed replicate.

    Returns (per-seed matrices, mean matrix, advs) with advs keyed by
    (method, seed).
    """
    cfg = protocol.config
    methods = methods or _csv_list(cfg["methods"])
    if seeds is None:
        seeds = [int(cfg["master_seed"]) + k for k in range(int(cfg["attack_seeds"]))]
    budget = budget_from(cfg)
    pgn_params = pgn_params_from(cfg)
    base_params = baseline_params_from(cfg)
    fd = fd_config_from(cfg, budget)
    advs = {}
    per_seed = []
    for seed in seeds:
        seed_advs = []
        for method in methods:
            res = attack_batch(method, protocol.surrogate, protocol.eval_images,
                               protocol.eval_labels, budget, seed,
                               pgn_params, base_params, fd,
                               transform=cfg["transform"], jobs=int(cfg["jobs"]),
                               dim_p=float(cfg["dim_p"]),
                               dim_max_scale=float(cfg["dim_max_scale"]),
                               sim_copies=int(cfg["sim_copies"]))
            advs[(method, seed)] = res
            seed_advs.extend(res)
        per_seed.append(transfer_eval(seed_advs, protocol.targets,
                                      protocol.surrogate.name))
    return per_seed, mean_matrix(per_seed), advs


# ---- sweeps ------------------------------------------------------------------

SWEEPABLE = ("delta", "zeta_factor", "samples", "fd_step")


@dataclass
class SweepReport:
    param: str
    values: list
    matrices: list               # mean TransferMatrix per value
    model_names: list

    def summary_rows(self):
        """(value, per-target mean rates..., average) per sweep point."""
        rows = []
        for v, m in zip(self.values, self.matrices):
            rates = [float(m.rates[0, j]) for j in range(len(self.model_names))]
            rows.append((v, rates, float(np.mean(rates))))
        return rows

    def to_csv(self):
        lines = [",".join([self.param] + self.model_names + ["avg"])]
        for v, rates, avg in self.summary_rows():
            cells = [f"{v}"] + [f"{r:.4f}" for r in rates] + [f"{avg:.4f}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def sweep(param, values, protocol, seeds=None):
    """Transfer matrices for the attack configured at each parameter value.

    Only the swept key changes; everything else comes from the protocol's
    configuration.  The attack is the norm-penalized method for all swept
    parameters.
    """
    if param not in SWEEPABLE:
        raise UsageError(f"cannot sweep {param!r} (one of {SWEEPABLE})")
    if not values:
        raise UsageError("sweep needs at least one value")
    matrices = []
    for value in values:
        cfg = dict(protocol.config)
        cfg[param] = value
        varied = Protocol(resolve_config(cfg), protocol.train_data,
                          protocol.test_data, protocol.surrogate,
                          protocol.targets, protocol.eval_images,
                          protocol.eval_labels)
        _, mean, _ = run_transfer(varied, methods=["pgn"], seeds=seeds)
        matrices.append(mean)
    return SweepReport(param, list(values), matrices,
                       matrices[0].model_names)


# ---- timing / complexity ablation --------------------------------------------


@dataclass
class TimingArm:
    name: str
    wall_time: float
    grad_evals: int
    per_image_evals: float
    peak_memory: int
    memory_estimator: str


@dataclass
class TimingReport:
    arms: list
    n_images: int
    input_dim: int
    advs: dict = field(default_factory=dict)

    def arm(self, name):
        return next(a for a in self.arms if a.name == name)

    def to_csv(self):
        lines = ["arm,wall_time_s,grad_evals,per_image_evals,"
                 "peak_memory_bytes,memory_estimator"]
        for a in self.arms:
            lines.append(f"{a.name},{a.wall_time:.6f},{a.grad_evals},"
                         f"{a.per_image_evals:.2f},{a.peak_memory},"
                         f"{a.memory_estimator}")
        return "\n".join(lines) + "\n"


def _traced(fn):
    """Run fn under allocator high-water instrumentation; returns (out, peak)."""
    if tracemalloc.is_tracing():
        tracemalloc.reset_peak()
        out = fn()
        _, peak = tracemalloc.get_traced_memory()
        return out, peak
    tracemalloc.start()
    try:
        out = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return out, peak


def _grad64(model, x, y, counter):
    _, grads = model.loss_and_input_grads(x[None], [y])
    counter.add(1)
    return grads[0]


def timing_compare(model, batch, budget, delta=0.5, fd_step=None,
                   oracle_h=1e-4, hessian_cap=1024):
    """Three-arm cost comparison on one batch (64-bit model arithmetic):

      * plain       sign-gradient iteration, 1 gradient eval per step
      * hessian     penalized update with the brute-force Hessian, 2n+1 per step
      * fdm         penalized update with the forward-difference HVP, 2 per step

    The two penalized arms optimize the same objective (lam = delta * fd_step),
    so their transfer rates should agree closely while the costs diverge.
    """
    if not batch:
        raise UsageError("timing_compare needs a non-empty batch")
    model64 = model.astype(np.float64)
    if fd_step is None:
        fd_step = budget.step_size
    lam = delta * fd_step
    n = int(np.prod(model.input_shape))

    def _iterate(kind):
        counter = EvalCounter()
        out = []
        for x, y in batch:
            x0 = np.asarray(x, np.float32)
            lo, hi = attacks._band(x0, budget)
            alpha = np.float32(budget.step_size)
            x_adv = x0.copy()
            records = []
            for _ in range(budget.steps):
                g = _grad64(model64, x_adv.astype(np.float64), int(y), counter)
                if kind == "plain":
                    greg = g
                elif kind == "fdm":
                    n2 = float(np.sqrt((g * g).sum()))
                    v = -g / n2 if n2 > 0 else np.zeros_like(g)
                    g2 = _grad64(model64,
                                 x_adv.astype(np.float64) + fd_step * v,
                                 int(y), counter)
                    greg = (1.0 - delta) * g + delta * g2
                else:  # hessian
                    hess = full_hessian(model64, x_adv.astype(np.float64),
                                        int(y), h=oracle_h, cap=hessian_cap,
                                        counter=counter)
                    n2 = float(np.sqrt((g * g).sum()))
                    if n2 > 0:
                        hv = (hess @ (g.reshape(-1) / n2)).reshape(g.shape)
                        greg = g - lam * hv
                    else:
                        greg = g
                x_adv = attacks._sign_step(x_adv, greg, alpha, lo, hi)
                records.append(IterRecord(0.0, float(np.abs(greg).sum()), 0.0,
                                          False))
            out.append(AdvResult(f"ifgsm+{kind}", x0, x_adv, int(y), budget,
                                 tuple(records), 0))
        return counter.count, out

    arms = []
    advs = {}
    for kind in ("plain", "hessian", "fdm"):
        t0 = time.perf_counter()
        (count, out), peak = _traced(lambda k=kind: _iterate(k))
        wall = time.perf_counter() - t0
        arms.append(TimingArm(kind, wall, count, count / len(batch), peak,
                              "tracemalloc"))
        advs[kind] = out
    return TimingReport(arms, len(batch), n, advs)


# ---- PGNA serialization ------------------------------------------------------


def save_adv(result, path):
    """Write one AdvResult in the PGNA binary format."""
    header = json.dumps({
        "method": result.method,
        "label": int(result.label),
        "budget": {"eps": result.budget.eps, "steps": result.budget.steps,
                   "step_size": result.budget.step_size,
                   "decay": result.budget.decay,
                   "clamp": list(result.budget.clamp)},
        "grad_evals": int(result.grad_evals),
        "iterations": [[r.loss, r.gbar_l1, r.momentum_l1, bool(r.flagged)]
                       for r in result.iterations],
    }, sort_keys=True).encode()
    arr = result.original
    with open(path, "wb") as f:
        f.write(PGNA_MAGIC)
        f.write(struct.pack("<I", PGNA_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(result.original.astype("<f4").tobytes())
        f.write(result.adv.astype("<f4").tobytes())


def load_adv(path):
    """Read one AdvResult back from a PGNA file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4:
            raise LengthError("file too short for PGNA magic")
        if magic != PGNA_MAGIC:
            raise FormatError(f"bad magic: expected {PGNA_MAGIC!r}, got {magic!r}")
        version, = struct.unpack("<I", _read(f, 4, "version"))
        if version != PGNA_VERSION:
            raise FormatError(f"unsupported PGNA version {version} "
                              f"(supported: {PGNA_VERSION})")
        hlen, = struct.unpack("<I", _read(f, 4, "header length"))
        header = json.loads(_read(f, hlen, "header"))
        ndim, = struct.unpack("<I", _read(f, 4, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "tensor shape"))
        count = int(np.prod(shape))
        original = np.frombuffer(_read(f, 4 * count, "original tensor"),
                                 dtype="<f4").reshape(shape).astype(np.float32)
        adv = np.frombuffer(_read(f, 4 * count, "adversarial tensor"),
                            dtype="<f4").reshape(shape).astype(np.float32)
    b = header["budget"]
    budget = AttackBudget(eps=b["eps"], steps=b["steps"],
                          step_size=b["step_size"], decay=b["decay"],
                          clamp=tuple(b["clamp"]))
    iters = tuple(IterRecord(l, g, m, bool(fl))
                  for l, g, m, fl in header["iterations"])
    return AdvResult(header["method"], original, adv, header["label"], budget,
                     iters, header["grad_evals"])


def _read(f, count, what):
    buf = f.read(count)
    if len(buf) != count:
        raise LengthError(f"truncated PGNA file while reading {what}")
    return buf


# ---- full experiment ---------------------------------------------------------


def flatness_table(protocol, advs_by_method, zeta, samples, master_seed):
    """Per-image max-gradient-norm estimates for each method's outputs."""
    names = list(advs_by_method)
    rows = []
    for i in range(len(next(iter(advs_by_method.values())))):
        row = []
        for name in names:
            a = advs_by_method[name][i]
            rng = example_rng(master_seed, i, lane=777)
            est = flatness.max_grad_norm_in_ball(protocol.surrogate, a.adv,
                                                 a.label, zeta, samples, rng)
            row.append(est.value)
        rows.append(row)
    return names, np.array(rows)


def run_experiment(config=None, out_dir=None):
    """End-to-end run: data -> zoo -> attacks -> evaluation -> report bundle.

    Writes manifest.json, transfer.csv (mean over seeds), one exact per-seed
    transfer CSV, serialized adversarial examples for the first seed, and
    optional flatness/timing reports.  Returns the output directory.
    """
    cfg = resolve_config(config)
    digest = config_hash(cfg)
    if out_dir is None:
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        out_dir = Path(f"runs/{stamp}-{digest[:8]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    protocol = build_protocol(cfg)
    per_seed, mean, advs = run_transfer(protocol)
    seeds = sorted({s for _, s in advs})

    manifest = {
        "config": cfg,
        "config_hash": digest,
        "versions": {"pgnlab": _version(), "numpy": np.__version__,
                     "python": platform.python_version()},
        "models": {m.name: {"train_acc": m.meta.get("train_acc"),
                            "test_acc": m.meta.get("test_acc")}
                   for m in [protocol.surrogate] + protocol.targets},
        "attack_seeds": seeds,
        "advs_seed": seeds[0],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    (out_dir / "transfer.csv").write_text(mean.to_csv())
    for k, matrix in enumerate(per_seed):
        (out_dir / f"transfer_seed{seeds[k]}.csv").write_text(matrix.to_csv())

    advs_dir = out_dir / "advs"
    advs_dir.mkdir(exist_ok=True)
    for method in _csv_list(cfg["methods"]):
        mdir = advs_dir / method
        mdir.mkdir(exist_ok=True)
        for i, a in enumerate(advs[(method, seeds[0])]):
            save_adv(a, mdir / f"{i:04d}.pgna")

    if cfg["with_flatness"] and {"mifgsm", "pgn"} <= set(_csv_list(cfg["methods"])):
        budget = budget_from(cfg)
        zeta = pgn_params_from(cfg).zeta(budget)
        names, rows = flatness_table(
            protocol,
            {"mifgsm": advs[("mifgsm", seeds[0])], "pgn": advs[("pgn", seeds[0])]},
            zeta, int(cfg["flatness_samples"]), seeds[0])
        lines = [",".join(["index"] + names)]
        for i, row in enumerate(rows):
            lines.append(",".join([str(i)] + [f"{v:.9g}" for v in row]))
        (out_dir / "flatness.csv").write_text("\n".join(lines) + "\n")

    if cfg["with_timing"]:
        batch = list(zip(protocol.eval_images[:int(cfg["timing_images"])],
                         protocol.eval_labels[:int(cfg["timing_images"])]))
        report = timing_compare(protocol.surrogate, batch, budget_from(cfg),
                                delta=float(cfg["delta"]))
        (out_dir / "timing.csv").write_text(report.to_csv())

    return out_dir


def recompute_transfer(advs_dir, targets, surrogate_name=""):
    """Rebuild a TransferMatrix from persisted PGNA records (per method dirs)."""
    advs_dir = Path(advs_dir)
    advs = []
    for mdir in sorted(p for p in advs_dir.iterdir() if p.is_dir()):
        for f in sorted(mdir.glob("*.pgna")):
            advs.append(load_adv(f))
    if not advs:
        raise UsageError(f"no PGNA records under {advs_dir}")
    return transfer_eval(advs, targets, surrogate_name)


def _version():
    from . import __version__
    return __version__

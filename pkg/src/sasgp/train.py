"""Training loops, evaluation, verification suites, and run exports.

One loop drives both objectives. Per batch: sample the batch, draw a fresh
uniform split into active/hold-out sets, encode (or look up) the latents,
evaluate the stochastic objective and its analytic gradients, and take an
Adam step on the negated per-datum value. The Bayesian variant additionally
reparameterizes latent samples from the encoded (or free) posterior and
scales the batch KL sum by N/B.

Run artifacts: curves.csv (epoch, objective, seconds), latents.csv,
checkpoint.npz, runlog.json, metrics.json. All files are written
atomically; everything except wall-clock timings is deterministic for a
fixed (seed, config, precision, platform).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import estimators
from .data import BatchPlan, Dataset, batches, load_csv, load_idx, subset, synth_gp_dataset
from .elbo import VariationalPosterior, elbo_terms_and_grads, kl_to_standard_normal
from .encoder import (
    MlpParams,
    encode,
    encode_gaussian_backward,
    encode_gaussian_forward,
    init_latent_table,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .errors import NonFiniteGradient
from .estimators import (
    ActiveSplit,
    conditional_moments,
    cv_identity_check,
    exact_log_marginal,
    random_split,
    sas_estimate,
    sas_grads,
    unbiased_marginal_exhaustive_mean,
)
from .kernel import KernelParams
from .metrics import PredictiveOutput, knn_accuracy, mae, nlpd, rmse
from .optim import ParamSet, adam_step, grad_check

MODES = ("sas", "bayesian-sas")
ABLATIONS = ("none", "conditional-only", "active-only")
_TERM_BY_ABLATION = {"none": "full", "conditional-only": "conditional", "active-only": "active"}
CHECKPOINT_VERSION = 1


@dataclass
class RunConfig:
    mode: str = "sas"
    amortized: bool = True
    data: str = "synth"  # "synth" | path to .csv | "idx:IMAGES[,LABELS]"
    n: int | None = 256  # subset size (synth: dataset size)
    d: int = 5  # synthetic output dimension
    q: int = 2
    active_set: int = 32
    batch: int = 64
    epochs: int = 300
    lr: float = 1e-2
    seed: int = 0
    jitter: float | str = "auto"
    num_mc: int = 1
    ablation: str = "none"
    precision: int = 64
    out: str | None = None
    csv_labels: bool = False
    # Synthetic-source generator hyperparameters (the model itself always
    # starts from the standard initialization and has to adapt).
    synth_amplitude: float = 1.0
    synth_lengthscale: float = 1.0
    synth_noise: float = 0.1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.ablation != "none" and self.mode != "sas":
            raise ValueError("ablation modes apply to mode='sas' only")
        if self.batch <= self.active_set:
            raise ValueError(f"batch size {self.batch} must exceed active-set size {self.active_set}")
        if not 1e-6 <= self.lr <= 1.0:
            raise ValueError("lr must lie in [1e-6, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.num_mc < 1:
            raise ValueError("num_mc must be at least 1")

    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EpochRecord:
    epoch: int
    objective: float  # batch-mean per-datum objective
    seconds: float
    kernel: tuple[float, float, float]  # (log_amplitude, log_lengthscale, log_noise)
    kl: float | None = None  # batch-mean per-datum KL (Bayesian mode only)


@dataclass
class RunLog:
    config: dict
    config_hash: str
    records: list[EpochRecord] = field(default_factory=list)
    final_metrics: dict | None = None

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "records": [asdict(r) for r in self.records],
            "final_metrics": self.final_metrics,
        }


def _atomic_write(path: str, payload: str | bytes) -> None:
    mode = "wb" if isinstance(payload, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(cfg: RunConfig) -> Dataset:
    """Resolve the config's data source to a (possibly subsetted) Dataset."""
    if cfg.data == "synth":
        gen = KernelParams.from_values(cfg.synth_amplitude, cfg.synth_lengthscale, cfg.synth_noise)
        ds, _ = synth_gp_dataset(cfg.n or 256, cfg.q, cfg.d, gen, cfg.seed)
        return ds
    if cfg.data.startswith("idx:"):
        parts = cfg.data[4:].split(",")
        ds = load_idx(parts[0], parts[1] if len(parts) > 1 else None)
    else:
        ds = load_csv(cfg.data, has_labels=cfg.csv_labels)
    if cfg.n is not None and cfg.n < ds.n:
        ds = subset(ds, cfg.n, cfg.seed)
    return ds


# ---------------------------------------------------------------------------
# Parameter sets and the objective/gradient glue shared by trainer and checks
# ---------------------------------------------------------------------------


def _mlp_from_ps(ps: ParamSet, prefix: str) -> MlpParams:
    layers = []
    i = 0
    while f"{prefix}_w{i}" in ps.params:
        layers.append((ps.params[f"{prefix}_w{i}"], ps.params[f"{prefix}_b{i}"]))
        i += 1
    return MlpParams(layers=layers)


def _mlp_entries(prefix: str, mlp: MlpParams) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(mlp.layers):
        out[f"{prefix}_w{i}"] = w
        out[f"{prefix}_b{i}"] = b
    return out


def init_paramset(cfg: RunConfig, d_in: int, n_rows: int, rng: np.random.Generator) -> ParamSet:
    """Parameters for one run: kernel vector plus encoder stacks or free latents."""
    dtype = cfg.dtype()
    entries: dict[str, np.ndarray] = {"kernel": KernelParams().to_vector().astype(dtype)}
    bayesian = cfg.mode == "bayesian-sas"
    if cfg.amortized:
        entries.update(_mlp_entries("encmu" if bayesian else "enc", init_mlp(d_in, cfg.q, rng, dtype=dtype)))
        if bayesian:
            entries.update(_mlp_entries("encvar", init_mlp(d_in, cfg.q, rng, dtype=dtype)))
    else:
        table = init_latent_table(n_rows, cfg.q, rng, bayesian=bayesian, dtype=dtype)
        if bayesian:
            entries["mu"] = table.mean
            entries["log_var"] = table.log_var
        else:
            entries["z"] = table.mean
    return ParamSet(entries)


def sas_loss_and_grads(
    ps: ParamSet,
    x_batch: np.ndarray,
    rows: np.ndarray | None,
    split: ActiveSplit,
    amortized: bool,
    ablation: str = "none",
    jitter: float | str = 0.0,
) -> tuple[float, dict[str, np.ndarray], estimators.EstimatorReport]:
    """Per-datum negated SAS objective with gradients for every parameter tensor.

    ``rows`` maps batch positions to dataset rows for the free-latent table
    (ignored when amortized).
    """
    p = KernelParams.from_vector(ps.params["kernel"])
    term = _TERM_BY_ABLATION[ablation]
    b = x_batch.shape[0]
    scale = -1.0 / b
    if amortized:
        mlp = _mlp_from_ps(ps, "enc")
        z, cache = mlp_forward(x_batch, mlp)
        report, dtheta, dz = sas_grads(x_batch, z, split, p, jitter, term)
        enc_grads, _ = mlp_backward(mlp, cache, scale * dz)
        grads = {"kernel": scale * dtheta}
        for i, (dw, db) in enumerate(enc_grads):
            grads[f"enc_w{i}"] = dw
            grads[f"enc_b{i}"] = db
    else:
        z = ps.params["z"][rows]
        report, dtheta, dz = sas_grads(x_batch, z, split, p, jitter, term)
        gz = np.zeros_like(ps.params["z"])
        gz[rows] = scale * dz
        grads = {"kernel": scale * dtheta, "z": gz}
    return scale * report.total, grads, report


def elbo_loss_and_grads(
    ps: ParamSet,
    x_batch: np.ndarray,
    rows: np.ndarray | None,
    split: ActiveSplit,
    eps: np.ndarray,
    kl_scale: float,
    amortized: bool,
    jitter: float | str = 0.0,
) -> tuple[float, dict[str, np.ndarray], estimators.EstimatorReport]:
    """Per-datum negated ELBO at fixed reparameterization noise.

    ``eps`` has shape (num_mc, B, Q); the data terms and their gradients are
    averaged over the leading axis, the closed-form KL enters once.
    """
    p = KernelParams.from_vector(ps.params["kernel"])
    b = x_batch.shape[0]
    scale = -1.0 / b
    if amortized:
        mlp_mu = _mlp_from_ps(ps, "encmu")
        mlp_var = _mlp_from_ps(ps, "encvar")
        q, cache_mu, cache_s, s = encode_gaussian_forward(x_batch, mlp_mu, mlp_var)
    else:
        q = VariationalPosterior(mu=ps.params["mu"][rows], log_var=ps.params["log_var"][rows])

    num_mc = eps.shape[0]
    dtheta = np.zeros(3)
    d_mu = np.zeros_like(q.mu)
    d_lv = np.zeros_like(q.log_var)
    total = term_c = term_a = 0.0
    kl = None
    for k in range(num_mc):
        rep_k, dth_k, dmu_k, dlv_k = elbo_terms_and_grads(x_batch, q, split, p, eps[k], kl_scale, jitter)
        total += rep_k.total
        term_c += rep_k.term_conditional
        term_a += rep_k.term_active
        kl = rep_k.kl_total
        dtheta += dth_k
        d_mu += dmu_k
        d_lv += dlv_k
    total /= num_mc
    dtheta /= num_mc
    d_mu /= num_mc
    d_lv /= num_mc
    report = estimators.EstimatorReport(
        total=total, term_conditional=term_c / num_mc, term_active=term_a / num_mc, kl_total=kl
    )

    grads = {"kernel": scale * dtheta}
    if amortized:
        g_mu_net, g_var_net = encode_gaussian_backward(
            mlp_mu, mlp_var, cache_mu, cache_s, s, scale * d_mu, scale * d_lv
        )
        for i, (dw, db) in enumerate(g_mu_net):
            grads[f"encmu_w{i}"] = dw
            grads[f"encmu_b{i}"] = db
        for i, (dw, db) in enumerate(g_var_net):
            grads[f"encvar_w{i}"] = dw
            grads[f"encvar_b{i}"] = db
    else:
        g_mu = np.zeros_like(ps.params["mu"])
        g_lv = np.zeros_like(ps.params["log_var"])
        g_mu[rows] = scale * d_mu
        g_lv[rows] = scale * d_lv
        grads["mu"] = g_mu
        grads["log_var"] = g_lv
    return scale * total, grads, report


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _train(cfg: RunConfig) -> RunLog:
    cfg.validate()
    dtype = cfg.dtype()
    ds = load_dataset(cfg)
    x = np.ascontiguousarray(ds.x.astype(dtype))
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    ps = init_paramset(cfg, x.shape[1], n, rng)
    plan = BatchPlan(batch_size=cfg.batch, seed=cfg.seed)
    bayesian = cfg.mode == "bayesian-sas"
    log = RunLog(config=asdict(cfg), config_hash=cfg.hash())

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        per_datum = []
        per_datum_kl = []
        for rows in batches(n, plan, epoch):
            b = rows.size
            if b <= cfg.active_set:
                continue  # tail batch too small to satisfy B > A
            x_b = x[rows]
            split = random_split(b, cfg.active_set, rng)
            if bayesian:
                eps = rng.standard_normal((cfg.num_mc, b, cfg.q)).astype(dtype)
                loss, grads, report = elbo_loss_and_grads(
                    ps, x_b, rows, split, eps, kl_scale=n / b, amortized=cfg.amortized, jitter=cfg.jitter
                )
            else:
                loss, grads, report = sas_loss_and_grads(
                    ps, x_b, rows, split, amortized=cfg.amortized, ablation=cfg.ablation, jitter=cfg.jitter
                )
            for name, g in grads.items():
                ps.add_grad(name, g)
            adam_step(ps, cfg.lr)
            if not ps.all_finite():
                raise NonFiniteGradient(f"parameters became non-finite in epoch {epoch}")
            if not np.isfinite(report.total):
                raise NonFiniteGradient(f"objective became non-finite in epoch {epoch}")
            per_datum.append(report.total / b)
            if report.kl_total is not None:
                per_datum_kl.append(report.kl_total / b)
        if not per_datum:
            raise ValueError(
                f"no batch of more than active_set={cfg.active_set} points; "
                f"dataset has {n} rows at batch size {cfg.batch}"
            )
        kern = tuple(float(v) for v in np.asarray(ps.params["kernel"], dtype=np.float64))
        log.records.append(
            EpochRecord(
                epoch=epoch,
                objective=float(np.mean(per_datum)),
                seconds=time.perf_counter() - t0,
                kernel=kern,
                kl=float(np.mean(per_datum_kl)) if per_datum_kl else None,
            )
        )

    if cfg.out:
        _export_run(cfg, ds, ps, log)
    return log


def train_sas(cfg: RunConfig) -> RunLog:
    """Stochastic active-set training of the deterministic GP decoder."""
    if cfg.mode != "sas":
        cfg = replace(cfg, mode="sas")
    return _train(cfg)


def train_bayesian_sas(cfg: RunConfig) -> RunLog:
    """ELBO training of the Bayesian GP decoder (mean-field latents)."""
    if cfg.mode != "bayesian-sas":
        cfg = replace(cfg, mode="bayesian-sas")
    return _train(cfg)


def run_ablation(cfg: RunConfig) -> RunLog:
    """SAS training with only one term of the objective active."""
    if cfg.ablation == "none":
        raise ValueError("run_ablation needs ablation='conditional-only' or 'active-only'")
    return _train(cfg)


def train(cfg: RunConfig) -> RunLog:
    return train_bayesian_sas(cfg) if cfg.mode == "bayesian-sas" else _train(cfg)


# ---------------------------------------------------------------------------
# Checkpoints and exports
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, ps: ParamSet, meta: dict) -> None:
    """Versioned npz container: every tensor plus a JSON metadata record."""
    buf = {k: v for k, v in ps.params.items()}
    buf["meta_json"] = np.array(json.dumps({"version": CHECKPOINT_VERSION, **meta}, sort_keys=True))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **buf)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as zf:
        params = {k: zf[k] for k in zf.files if k != "meta_json"}
        meta = json.loads(str(zf["meta_json"]))
    return params, meta


def encode_all(
    params: dict[str, np.ndarray], meta: dict, x: np.ndarray, chunk: int = 2048
) -> tuple[np.ndarray, np.ndarray | None]:
    """Latents (and variances, Bayesian mode) for every row of x.

    Amortized checkpoints run the encoder; non-amortized ones return the
    stored per-datum table, which requires x to align with the training rows.
    """
    ps = ParamSet(params)
    bayesian = meta["mode"] == "bayesian-sas"
    if meta["amortized"]:
        x = x.astype(ps.params[("encmu_w0" if bayesian else "enc_w0")].dtype)
        zs, vs = [], []
        for i in range(0, x.shape[0], chunk):
            xb = x[i : i + chunk]
            if bayesian:
                q, _, _, _ = encode_gaussian_forward(xb, _mlp_from_ps(ps, "encmu"), _mlp_from_ps(ps, "encvar"))
                zs.append(q.mu)
                vs.append(q.var)
            else:
                zs.append(encode(xb, _mlp_from_ps(ps, "enc")))
        return np.vstack(zs), (np.vstack(vs) if bayesian else None)
    if bayesian:
        if x.shape[0] != params["mu"].shape[0]:
            raise ValueError("non-amortized checkpoint only covers its training rows")
        return params["mu"], np.exp(params["log_var"])
    if x.shape[0] != params["z"].shape[0]:
        raise ValueError("non-amortized checkpoint only covers its training rows")
    return params["z"], None


def _export_run(cfg: RunConfig, ds: Dataset, ps: ParamSet, log: RunLog) -> None:
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    curves = ["epoch,objective,seconds"]
    for r in log.records:
        curves.append(f"{r.epoch},{r.objective:.17g},{r.seconds:.6f}")
    _atomic_write(os.path.join(out, "curves.csv"), "\n".join(curves) + "\n")

    meta = {
        "mode": cfg.mode,
        "amortized": cfg.amortized,
        "q": cfg.q,
        "seed": cfg.seed,
        "precision": cfg.precision,
        "config": asdict(cfg),
        "config_hash": log.config_hash,
    }
    save_checkpoint(os.path.join(out, "checkpoint.npz"), ps, meta)

    z, var = encode_all(ps.params, meta, ds.x)
    header = ["index"]
    if ds.labels is not None:
        header.append("label")
    header += [f"z_{j+1}" for j in range(z.shape[1])]
    if var is not None:
        header += [f"var_{j+1}" for j in range(var.shape[1])]
    lines = [",".join(header)]
    for i in range(z.shape[0]):
        cells = [str(i)]
        if ds.labels is not None:
            cells.append(str(int(ds.labels[i])))
        cells += [format(v, ".17g") for v in z[i]]
        if var is not None:
            cells += [format(v, ".17g") for v in var[i]]
        lines.append(",".join(cells))
    _atomic_write(os.path.join(out, "latents.csv"), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(out, "runlog.json"), json.dumps(log.to_dict(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(
    checkpoint_path: str,
    test: Dataset | None,
    active_draws: int = 1,
    seed: int = 0,
    out: str | None = None,
    train_ds: Dataset | None = None,
    report_x10: bool = False,
) -> dict:
    """Predictive metrics (and 1-NN latent accuracy when labels exist).

    Conditions the predictive distribution on ``active_draws`` random active
    sets drawn from the training subset (mixture moment-matching across
    draws). ``test=None`` scores the training subset itself, which is the
    only option for non-amortized checkpoints.
    """
    params, meta = load_checkpoint(checkpoint_path)
    cfg = RunConfig(**meta["config"])
    if train_ds is None:
        train_ds = load_dataset(cfg)
    if test is None:
        test = train_ds
    elif not meta["amortized"]:
        raise ValueError("test-set evaluation needs an amortized checkpoint (no encoder for unseen data)")

    p = KernelParams.from_vector(np.asarray(params["kernel"], dtype=np.float64))
    z_train, _ = encode_all(params, meta, train_ds.x)
    z_test, _ = encode_all(params, meta, test.x) if test is not train_ds else (z_train, None)

    rng = np.random.default_rng(seed)
    a = min(cfg.active_set, train_ds.n)
    mus, second = 0.0, 0.0
    for _ in range(active_draws):
        rows = rng.choice(train_ds.n, size=a, replace=False)
        mu_k, v_k = conditional_moments(
            train_ds.x[rows].astype(np.float64), z_train[rows].astype(np.float64), z_test.astype(np.float64), p, jitter="auto"
        )
        mus = mus + mu_k
        second = second + v_k[:, None] + mu_k**2
    mu = mus / active_draws
    v = np.maximum((second / active_draws - mu**2).mean(axis=1), 1e-12)
    pred = PredictiveOutput(mu_star=mu, v_star=v)

    block = {
        "rmse": rmse(test.x, pred),
        "mae": mae(test.x, pred),
        "nlpd": nlpd(test.x, pred),
        "active_draws": active_draws,
        "checkpoint": os.path.basename(checkpoint_path),
        "config_hash": meta.get("config_hash"),
    }
    if train_ds.labels is not None and test.labels is not None:
        block["knn_accuracy"] = knn_accuracy(z_train, train_ds.labels, z_test, test.labels)
    if report_x10:
        for k in ("rmse", "mae", "nlpd"):
            block[f"{k}_x10"] = 10.0 * block[k]
    if out:
        _atomic_write(os.path.join(out, "metrics.json"), json.dumps(block, indent=2, sort_keys=True))
    return block


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------


@dataclass
class VerifyResult:
    name: str
    passed: bool
    detail: str
    relaxed: bool = False


def _dtype_of(precision: int):
    return np.float64 if precision == 64 else np.float32


def _verify_cv_identity(precision: int, seed: int) -> VerifyResult:
    tol = 1e-8 if precision == 64 else 1e-3
    dt = _dtype_of(precision)
    rng = np.random.default_rng(seed)
    p = KernelParams()
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(2, 9))
        d = int(rng.choice([1, 3]))
        z = rng.standard_normal((n, 2)).astype(dt)
        x = rng.standard_normal((n, d)).astype(dt)
        rep = cv_identity_check(x, z, p)
        worst = max(worst, abs(rep.lhs - rep.rhs), float(np.max(np.abs(rep.s_ccv + rep.s_pcv - rep.lhs))))
    return VerifyResult("cv-identity", worst <= tol, f"max gap {worst:.3e} (tol {tol:g})", precision == 32)


def _verify_two_term(precision: int, seed: int) -> VerifyResult:
    tol = 1e-9 if precision == 64 else 1e-3
    dt = _dtype_of(precision)
    rng = np.random.default_rng(seed)
    p = KernelParams()
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(4, 65))
        z = rng.standard_normal((n, 2)).astype(dt)
        x = rng.standard_normal((n, 2)).astype(dt)
        a = int(rng.integers(1, n))
        split = random_split(n, a, rng)
        gap = abs(estimators.exact_two_term(x, z, split, p) - exact_log_marginal(x, z, p))
        worst = max(worst, gap)
    return VerifyResult("two-term", worst <= tol, f"max |two_term - exact| {worst:.3e} (tol {tol:g})", precision == 32)


def _verify_sas_r1(precision: int, seed: int) -> VerifyResult:
    tol = 1e-9 if precision == 64 else 1e-3
    dt = _dtype_of(precision)
    rng = np.random.default_rng(seed)
    p = KernelParams()
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(3, 33))
        z = rng.standard_normal((n, 2)).astype(dt)
        x = rng.standard_normal((n, 2)).astype(dt)
        split = random_split(n, n - 1, rng)
        gap = abs(sas_estimate(x, z, split, p).total - exact_log_marginal(x, z, p))
        worst = max(worst, gap)
    return VerifyResult("sas-r1", worst <= tol, f"max |sas(R=1) - exact| {worst:.3e} (tol {tol:g})", precision == 32)


def _verify_unbiased(precision: int, seed: int) -> VerifyResult:
    tol = 1e-8 if precision == 64 else 1e-3
    dt = _dtype_of(precision)
    rng = np.random.default_rng(seed)
    p = KernelParams()
    worst = 0.0
    for i in range(10):
        n = int(rng.integers(2, 6))
        z = rng.standard_normal((n, 2)).astype(dt)
        x = rng.standard_normal((n, 2)).astype(dt)
        gap = abs(unbiased_marginal_exhaustive_mean(x, z, p) - exact_log_marginal(x, z, p))
        worst = max(worst, gap)
    return VerifyResult("unbiased", worst <= tol, f"max |E[sample] - exact| {worst:.3e} (tol {tol:g})", precision == 32)


_GRAD_CHECK_CONFIGS = (
    (dict(mode="sas", amortized=False), "exact"),
    (dict(mode="sas", amortized=True), "sas"),
    (dict(mode="bayesian-sas", amortized=True), "elbo"),
    (dict(mode="bayesian-sas", amortized=False), "elbo"),
)


def _verify_gradients(precision: int, seed: int) -> VerifyResult:
    if precision == 64:
        tol = 1e-5
        rng = np.random.default_rng(seed)
        errs = []
        for overrides, builder in _GRAD_CHECK_CONFIGS:
            cfg = RunConfig(n=8, d=3, q=2, active_set=5, batch=8, **overrides)
            objective, ps = build_check_objective(cfg, builder, rng)
            # Amortized objectives are smoother but mix in tiny-gradient weight
            # coordinates, so they get a slightly larger step against roundoff.
            h = 3e-5 if cfg.amortized else 1e-5
            errs.append(grad_check(objective, ps, h=h, sample=60, rng=rng))
        worst = max(errs)
        return VerifyResult("gradients", worst <= tol, f"max FD rel err {worst:.3e} (tol {tol:g})")
    # Central differences drown in float32 roundoff, so the 32-bit check
    # compares the float32 analytic gradients against the FD-verified
    # float64 analytic path on the same instance.
    tol = 1e-2
    worst = 0.0
    for overrides, builder in _GRAD_CHECK_CONFIGS:
        cfg64 = RunConfig(n=8, d=3, q=2, active_set=5, batch=8, precision=64, **overrides)
        cfg32 = replace(cfg64, precision=32)
        obj64, ps64 = build_check_objective(cfg64, builder, np.random.default_rng(seed))
        obj32, ps32 = build_check_objective(cfg32, builder, np.random.default_rng(seed))
        _, g64 = obj64(ps64)
        _, g32 = obj32(ps32)
        for name, g in g64.items():
            diff = np.abs(np.asarray(g32[name], dtype=np.float64) - g)
            denom = np.maximum(np.abs(g), 1e-3)
            worst = max(worst, float((diff / denom).max()))
    return VerifyResult(
        "gradients", worst <= tol, f"float32 vs float64 analytic grads, max rel err {worst:.3e} (tol {tol:g})", True
    )


def _verify_kl(precision: int, seed: int) -> VerifyResult:
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal((4, 2))
    lv = rng.standard_normal((4, 2)) * 0.3
    q = VariationalPosterior(mu=mu, log_var=lv)
    closed = kl_to_standard_normal(q)
    m = 10**5
    eps = rng.standard_normal((m, 4, 2))
    zs = mu[None] + np.exp(0.5 * lv)[None] * eps
    log_q = -0.5 * (np.log(2 * np.pi) + lv[None] + eps**2).sum(axis=2)
    log_p = -0.5 * (np.log(2 * np.pi) + zs**2).sum(axis=2)
    draws = log_q - log_p
    mc = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(m)
    ok = bool(np.all(np.abs(closed - mc) <= 3 * se))
    prior = VariationalPosterior(mu=np.zeros((3, 2)), log_var=np.zeros((3, 2)))
    ok = ok and bool(np.all(kl_to_standard_normal(prior) == 0.0))
    return VerifyResult("kl", ok, f"max |closed-MC|/se {float(np.max(np.abs(closed - mc) / se)):.2f} (<=3)")


def lower_bound_fraction(num_instances: int = 100, n: int = 64, a: int = 16, d: int = 2, q: int = 2, seed: int = 0) -> float:
    """Fraction of random GP instances where the SAS estimate sits at or below
    the exact log marginal (reported, not asserted)."""
    rng = np.random.default_rng(seed)
    p = KernelParams()
    hits = 0
    for i in range(num_instances):
        ds, z = synth_gp_dataset(n, q, d, p, seed=int(rng.integers(2**31)))
        split = random_split(n, a, rng)
        if sas_estimate(ds.x, z, split, p).total <= exact_log_marginal(ds.x, z, p):
            hits += 1
    return hits / num_instances


def _verify_lower_bound(precision: int, seed: int) -> VerifyResult:
    frac = lower_bound_fraction(seed=seed)
    return VerifyResult("lower-bound-report", True, f"sas <= exact in {frac:.0%} of 100 instances (informational)")


_SUITES = {
    "cv-identity": _verify_cv_identity,
    "two-term": _verify_two_term,
    "sas-r1": _verify_sas_r1,
    "unbiased": _verify_unbiased,
    "gradients": _verify_gradients,
    "kl": _verify_kl,
    "lower-bound-report": _verify_lower_bound,
}


def verify(suite: str = "all", precision: int = 64, seed: int = 0) -> list[VerifyResult]:
    """Run the oracle suites; ``suite`` selects one family or 'all'."""
    names = list(_SUITES) if suite in ("all", "default") else [suite]
    results = []
    for name in names:
        if name not in _SUITES:
            raise ValueError(f"unknown verify suite {name!r}; have {sorted(_SUITES)}")
        results.append(_SUITES[name](precision, seed))
    return results


# ---------------------------------------------------------------------------
# Objective builders shared with the finite-difference harness
# ---------------------------------------------------------------------------


def build_check_objective(cfg: RunConfig, kind: str, rng: np.random.Generator):
    """A deterministic (value, grads) objective over a fresh ParamSet.

    kind: 'exact' (full log marginal over free latents), 'sas' (one split of
    one batch), or 'elbo' (one split at fixed reparameterization noise).
    Latents are initialized at the lengthscale's spatial scale so the
    finite-difference comparison is well conditioned.
    """
    n = cfg.n or 8
    d = cfg.d
    dtype = cfg.dtype()
    x = rng.standard_normal((n, d)).astype(dtype)
    ps = init_paramset(cfg, d, n, rng)
    if cfg.amortized:
        # Encoded/sampled latents land at O(1) spread, so give the check a
        # matching lengthscale; otherwise kernel gradients underflow into
        # finite-difference roundoff.
        ps.params["kernel"][...] = KernelParams.from_values(0.5, 1.0, 0.5).to_vector().astype(dtype)
    else:
        key = "mu" if cfg.mode == "bayesian-sas" else "z"
        ps.params[key][...] = (0.1 * rng.standard_normal((n, cfg.q))).astype(dtype)
    split = random_split(n, cfg.active_set, rng)
    eps = rng.standard_normal((cfg.num_mc, n, cfg.q)).astype(dtype)

    if kind == "exact":
        def objective(pset: ParamSet):
            p = KernelParams.from_vector(pset.params["kernel"])
            value, dtheta, dz = estimators.exact_log_marginal_grads(x, pset.params["z"], p)
            return value, {"kernel": dtheta, "z": dz}
        return objective, ps

    if kind == "sas":
        def objective(pset: ParamSet):
            loss, grads, _ = sas_loss_and_grads(pset, x, np.arange(n), split, amortized=cfg.amortized)
            return loss, grads
        return objective, ps

    if kind == "elbo":
        def objective(pset: ParamSet):
            loss, grads, _ = elbo_loss_and_grads(
                pset, x, np.arange(n), split, eps, kl_scale=1.5, amortized=cfg.amortized
            )
            return loss, grads
        return objective, ps

    raise ValueError(f"unknown objective kind {kind!r}")

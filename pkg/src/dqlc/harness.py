"""Monte Carlo simulation, parameter sweeps and their text file formats."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import analysis, bounds, codec, uncoded
from .gauss import RNG_ALGORITHM, SourceModel, make_rng, sample

SCHEMES = ("bound", "uncoded", "dqlc-analytic", "dqlc-sim", "high-snr-loss")
SIM_SCHEMES = ("uncoded", "dqlc-sim")
CSV_COLUMNS = ("scheme,M,rho,snr_db,sdr_db,sdr_ci_db,d_avg,d1,d2,d3,p1,p2,p3,delta1,delta2,nq2,"
               "alpha2,alpha3,kappa3,beta,xi,samples,seed,error").split(",")
BATCH = 1 << 17
Z95 = 1.959963984540054


def parse_snr_range(text: str) -> list[float]:
    """``"start:stop:step"`` (stop inclusive) or a comma list, in dB."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            parts.append(1.0)
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"bad range {text!r}; expected start:stop:step with step > 0")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(max(n, 0))]
    return [float(p) for p in text.split(",") if p.strip()]


def parse_float_list(text: str) -> list[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


@dataclass
class ExperimentSpec:
    schemes: tuple = ("bound", "uncoded", "dqlc-sim")
    M: int = 3
    rho: tuple = (0.0,)
    snr_db: tuple = (10.0,)
    P: float = 1.0
    samples: int = 10**6
    seed: int = 0
    threads: int = 1
    search: analysis.SearchConfig = field(default_factory=analysis.SearchConfig)
    params: codec.DqlcParams | None = None
    conditional: bool = True
    out: str | None = None

    def __post_init__(self):
        self.schemes = tuple(self.schemes)
        self.rho = tuple(float(r) for r in self.rho)
        self.snr_db = tuple(float(s) for s in self.snr_db)
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes {sorted(unknown)}; choose from {SCHEMES}")
        if not self.snr_db or any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise ValueError("snr list must be non-empty and strictly increasing")
        if any(not 0.0 <= r <= 1.0 for r in self.rho):
            raise ValueError("rho values must lie in [0, 1]")
        if set(self.schemes) & set(SIM_SCHEMES) and self.samples < 10**4:
            raise ValueError("simulated schemes need at least 10^4 samples")
        if self.P <= 0 or self.threads < 1:
            raise ValueError("power must be positive and threads at least 1")


@dataclass
class SimResult:
    scheme: str
    M: int
    rho: float
    snr_db: float
    sdr_db: float = float("nan")
    sdr_ci_db: float = float("nan")
    d_avg: float = float("nan")
    d_sources: tuple = ()
    powers: tuple = ()
    params: codec.DqlcParams | None = None
    samples: int | None = None
    seed: int | None = None
    wall_time: float = 0.0
    error: str = ""

    def row(self) -> dict:
        r = {"scheme": self.scheme, "M": self.M, "rho": self.rho, "snr_db": self.snr_db,
             "sdr_db": self.sdr_db, "sdr_ci_db": self.sdr_ci_db, "d_avg": self.d_avg,
             "samples": self.samples, "seed": self.seed, "error": self.error}
        for i, d in enumerate(self.d_sources[:3]):
            r[f"d{i + 1}"] = d
        for i, p in enumerate(self.powers[:3]):
            r[f"p{i + 1}"] = p
        p = self.params
        if p is not None and p.M == 3:
            r.update(delta1=p.delta[0], delta2=p.delta[1], nq2=p.nq[0], alpha2=p.alpha[1], alpha3=p.alpha[2],
                     kappa3=p.kappa_M, beta=p.beta, xi=p.xi)
        return r


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else f"{float(v):.9g}"
    return str(v)


# Monte Carlo ------------------------------------------------------------------

class _ErrorAccumulator:
    """Running sums of the per-vector mean squared error."""

    def __init__(self, M):
        self.n = 0
        self.s = 0.0
        self.s2 = 0.0
        self.per_source = np.zeros(M)

    def add(self, x, x_hat):
        e2 = (x - x_hat) ** 2
        e = e2.mean(axis=1)
        self.n += e.size
        self.s += float(e.sum())
        self.s2 += float(np.dot(e, e))
        self.per_source += e2.sum(axis=0)

    def finish(self, sigma_x2):
        D = self.s / self.n
        var = max(self.s2 / self.n - D * D, 0.0)
        half = Z95 * math.sqrt(var / self.n)
        return D, self.per_source / self.n, float(10.0 / math.log(10.0) * half / D)


def _batches(n):
    done = 0
    while done < n:
        k = min(BATCH, n - done)
        yield k
        done += k


def simulate_uncoded(M: int, rho: float, snr_db: float, samples: int, rng: np.random.Generator,
                     P: float = 1.0, sigma_x2: float = 1.0) -> SimResult:
    t0 = time.perf_counter()
    model = SourceModel.from_correlation(M, rho, sigma_x2)
    sigma_n2 = P / bounds.from_db(snr_db)
    acc = _ErrorAccumulator(M)
    for k in _batches(samples):
        x = sample(model, k, rng=rng)
        noise = rng.standard_normal(k) * math.sqrt(sigma_n2)
        acc.add(x, uncoded.simulate_uncoded(x, P, rho, sigma_x2, sigma_n2, noise))
    D, per, ci = acc.finish(sigma_x2)
    return SimResult("uncoded", M, rho, snr_db, float(bounds.to_db(sigma_x2 / D)), ci, D, tuple(per),
                     powers=(P,) * M, samples=samples, wall_time=time.perf_counter() - t0)


def simulate_dqlc(params: codec.DqlcParams, rho: float, snr_db: float, samples: int, rng: np.random.Generator,
                  P: float = 1.0, sigma_x2: float = 1.0, conditional: bool = True, b: float = 4.0) -> SimResult:
    """Encode, pass through the GMAC and decode ``samples`` source vectors."""
    t0 = time.perf_counter()
    M = params.M
    model = SourceModel.from_correlation(M, rho, sigma_x2)
    sigma_n2 = P / bounds.from_db(snr_db)
    if params.beta is None:
        params = params.with_wiener_beta(sigma_x2, sigma_n2)
    acc = _ErrorAccumulator(M)
    power = np.zeros(M)
    for k in _batches(samples):
        x = sample(model, k, rng=rng)
        noise = rng.standard_normal(k) * math.sqrt(sigma_n2)
        y = codec.encode(x, params)
        power += (y * y).sum(axis=0)
        q_hat, xm = codec.decode_sequential(codec.channel(y, noise=noise), params, rho, sigma_x2=sigma_x2, b=b)
        acc.add(x, codec.reconstruct(q_hat, xm, params, rho, model=model, sigma_n2=sigma_n2,
                                     conditional=conditional))
    D, per, ci = acc.finish(sigma_x2)
    return SimResult("dqlc-sim", M, rho, snr_db, float(bounds.to_db(sigma_x2 / D)), ci, D, tuple(per),
                     powers=tuple(power / samples), params=params, samples=samples,
                     wall_time=time.perf_counter() - t0)


def bound_point(M: int, rho: float, snr_db: float, sigma_x2: float = 1.0) -> SimResult:
    b = bounds.distortion_lower_bound(M, bounds.from_db(snr_db), rho, sigma_x2)
    return SimResult("bound", M, rho, snr_db, b.sdr_db, d_avg=b.D_lb)


def high_snr_point(M: int, rho: float, snr_db: float, b: float = 4.0) -> SimResult:
    d = analysis.high_snr_design(M, bounds.from_db(snr_db), rho, b)
    return SimResult("high-snr-loss", M, rho, snr_db, d.sdr_db, d_avg=1.0 / d.sdr)


def analytic_point(params: codec.DqlcParams, report: analysis.DistortionReport, rho: float,
                   snr_db: float) -> SimResult:
    return SimResult("dqlc-analytic", params.M, rho, snr_db, report.sdr_db(), d_avg=report.D_avg,
                     d_sources=tuple(report.D), powers=tuple(report.powers), params=params)


def optimize_chain(M: int, rho: float, snr_db_list, search: analysis.SearchConfig, warm: bool = True):
    """Optimise along increasing SNR, warm-starting from the previous point.

    Returns ``{snr_db: (params, report)}`` or ``{snr_db: exception}``.
    """
    if M != 3:
        raise ValueError("parameter optimisation is available for three sources only")
    model = SourceModel.from_correlation(3, rho)
    out, prev = {}, None
    for s in snr_db_list:
        try:
            res = analysis.optimize_m3(model, bounds.from_db(s), search, warm_start=prev if warm else None)
            out[s] = res
            prev = res[0]
        except (ValueError, RuntimeError) as exc:
            out[s] = exc
    return out


def _point_seed(seed: int, index: int) -> np.random.Generator:
    return make_rng(seed, index)


def sweep(spec: ExperimentSpec) -> list[SimResult]:
    """Evaluate every scheme on the ``rho x snr`` grid.

    Rows are ordered by scheme, then rho, then snr.  Monte Carlo points use
    the stream ``(seed, point index)``, so results do not depend on the
    thread count.  Failures are stored in the ``error`` field.
    """
    grid = [(r, s) for r in spec.rho for s in spec.snr_db]
    needs_opt = {"dqlc-analytic", "dqlc-sim"} & set(spec.schemes) and spec.params is None
    optimized = {}
    with ThreadPoolExecutor(max_workers=spec.threads) as pool:
        if needs_opt:
            if spec.M != 3:
                raise ValueError("optimised schemes need M=3 or an explicit parameter file")
            chains = {r: pool.submit(optimize_chain, spec.M, r, spec.snr_db, spec.search) for r in spec.rho
                      if r < 1.0}
            for r in spec.rho:
                res = chains[r].result() if r in chains else {}
                for s in spec.snr_db:
                    optimized[(r, s)] = res.get(s, ValueError("optimisation needs rho < 1"))

        jobs = []
        for si, scheme in enumerate(spec.schemes):
            for gi, (r, s) in enumerate(grid):
                index = si * len(grid) + gi
                jobs.append(pool.submit(_run_point, spec, scheme, r, s, index, optimized.get((r, s))))
        return [j.result() for j in jobs]


def _run_point(spec, scheme, rho, snr_db, index, opt):
    M = spec.M
    try:
        if scheme == "bound":
            return bound_point(M, rho, snr_db)
        if scheme == "high-snr-loss":
            return high_snr_point(M, rho, snr_db, spec.search.b)
        if scheme == "uncoded":
            res = simulate_uncoded(M, rho, snr_db, spec.samples, _point_seed(spec.seed, index), spec.P)
            return replace(res, seed=spec.seed)
        if spec.params is not None:
            params = spec.params
            if scheme == "dqlc-analytic":
                model = SourceModel.from_correlation(M, rho)
                rep = analysis.distortion_m3(params, model, bounds.from_db(snr_db), spec.P, spec.search.b,
                                             spec.search.spread, spec.search.estimator, spec.search.jumps)
                return analytic_point(params, rep, rho, snr_db)
        else:
            if isinstance(opt, Exception):
                raise opt
            params, rep = opt
            if scheme == "dqlc-analytic":
                return analytic_point(params, rep, rho, snr_db)
        res = simulate_dqlc(params, rho, snr_db, spec.samples, _point_seed(spec.seed, index), spec.P,
                            conditional=spec.conditional, b=spec.search.b)
        return replace(res, seed=spec.seed)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return SimResult(scheme, M, rho, snr_db, error=f"{type(exc).__name__}: {exc}".replace("\n", " "))


# files ------------------------------------------------------------------------

def write_csv(results, path, meta: dict | None = None) -> None:
    """Write rows with the fixed column set and a ``.meta`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for res in results:
            row = res.row() if isinstance(res, SimResult) else res
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    info = {"rng_algorithm": RNG_ALGORITHM, "columns": len(CSV_COLUMNS)}
    info.update(meta or {})
    write_keyvalue(path.with_name(path.name + ".meta"), info)


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_table(rows, path, columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def write_keyvalue(path, values: dict, header: str | None = None) -> None:
    lines = [f"# {h}" for h in (header or "").splitlines()]
    for k, v in values.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(_fmt(x) for x in v)
        else:
            v = _fmt(v)
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalue(path) -> dict:
    """Flat ``key=value`` text; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_params(params: codec.DqlcParams, path, note: str | None = None) -> None:
    values = {f.name: getattr(params, f.name) for f in fields(params)}
    write_keyvalue(path, values, header=note)


def read_params(path) -> codec.DqlcParams:
    kv = read_keyvalue(path)
    known = {f.name for f in fields(codec.DqlcParams)}
    extra = set(kv) - known
    if extra:
        raise ValueError(f"unknown parameter keys {sorted(extra)} in {path}")
    try:
        return codec.DqlcParams(
            M=int(kv["M"]),
            delta=tuple(parse_float_list(kv["delta"])),
            nq=tuple(int(float(v)) for v in parse_float_list(kv.get("nq", ""))),
            alpha=tuple(parse_float_list(kv["alpha"])),
            kappa_M=float(kv["kappa_M"]),
            beta=float(kv["beta"]) if kv.get("beta") else None,
            xi=float(kv.get("xi", 1.0) or 1.0),
            quantizer_style=kv.get("quantizer_style", codec.MIDRISE) or codec.MIDRISE,
        )
    except KeyError as exc:
        raise ValueError(f"parameter file {path} lacks key {exc.args[0]!r}") from None

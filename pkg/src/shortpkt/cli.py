"""Command-line front end.

Every subcommand writes one table, as CSV (first line ``# schema_version=1``)
or JSON (``{"schema_version": 1, ...}``).  Probabilities carry nine
significant digits; ``NA`` marks a value that is undefined for the
parameters (netcalc for the asynchronous model, saddlepoint at or below
the mean).

Parameters may also come from a flat ``key = value`` file given with
``--config``; keys are the long flag names (``snr-db`` or ``snr_db``).
Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import sys
from dataclasses import dataclass

from .analysis import (
    netcalc_bound,
    saddlepoint_tail,
    tail_series,
    threshold_in_units,
)
from .channel import ChannelParams, db_to_linear, error_probability
from .errors import BelowMeanError, ShortPacketError
from .optimizer import best_throughput, blocklength_sweep, throughput_vs_blocklength
from .pgf import Regime, SystemParams, Unit, delay_pgf, peak_age_pgf
from .simulator import SimConfig, simulate

SCHEMA_VERSION = 1
NA = "NA"


# -- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    command: str
    snr_db: float | None
    k: int
    n: int | None
    n_min: int | None
    n_max: int | None
    lam: float | None
    epsilon: float | None
    d0: tuple[int, ...]
    a0: tuple[int, ...]
    target: float | None
    regime: Regime
    method: str
    horizon: int
    warmup: int | None
    seed: int
    replicas: int
    record_every: int
    fmt: str
    out: str | None
    precision: str

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> RunConfig:
        return cls(
            command=ns.command, snr_db=ns.snr_db, k=ns.k, n=getattr(ns, "n", None),
            n_min=getattr(ns, "n_min", None), n_max=getattr(ns, "n_max", None),
            lam=getattr(ns, "lam", None), epsilon=ns.epsilon,
            d0=tuple(getattr(ns, "d0", None) or ()), a0=tuple(getattr(ns, "a0", None) or ()),
            target=getattr(ns, "target", None), regime=Regime(ns.regime),
            method=getattr(ns, "method", "exact"),
            horizon=getattr(ns, "horizon", 0), warmup=getattr(ns, "warmup", None),
            seed=getattr(ns, "seed", 0), replicas=getattr(ns, "replicas", 1),
            record_every=getattr(ns, "record_every", 1),
            fmt=ns.format, out=ns.out, precision=ns.precision,
        )

    def require(self, *names: str):
        missing = [n for n in names if getattr(self, n) in (None, ())]
        if missing:
            flags = ", ".join("--" + _FLAG_NAMES.get(m, m).replace("_", "-") for m in missing)
            raise ShortPacketError(f"{self.command}: missing required parameter(s) {flags}")

    def epsilon_for(self, n: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        self.require("snr_db")
        return error_probability(ChannelParams.from_db(self.snr_db, self.k, n))

    def system(self) -> SystemParams:
        self.require("n", "lam")
        return SystemParams(self.lam, self.n, self.epsilon_for(self.n), self.regime)


_FLAG_NAMES = {"lam": "lambda"}


def load_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment, quotes around values are dropped."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ShortPacketError(f"cannot parse config file {path}: {exc}") from None
    out = {}
    for key, value in parser.items("config"):
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.replace("-", "_")] = value
    return out


# -- output ---------------------------------------------------------------------------

def fmt_prob(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return NA
    return f"{x:.8e}"


def fmt_real(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return NA
    return f"{x:.9g}"


def _json_value(x):
    if x is None or x == NA:
        return None
    if isinstance(x, (int, float)):
        return x
    try:
        return int(x)
    except ValueError:
        pass
    try:
        return float(x)
    except ValueError:
        return x


def write_table(cfg: RunConfig, columns: list[str], rows: list[list[str]],
                meta: dict | None = None):
    if cfg.fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "command": cfg.command, "columns": columns,
               "rows": [{c: _json_value(v) for c, v in zip(columns, r)} for r in rows]}
        if meta:
            doc["meta"] = {k: _json_value(v) for k, v in meta.items()}
        text = json.dumps(doc, indent=2) + "\n"
    else:
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        for key, value in (meta or {}).items():
            buf.write(f"# {key}={value}\n")
        buf.write(",".join(columns) + "\n")
        for r in rows:
            buf.write(",".join(r) + "\n")
        text = buf.getvalue()
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------------------

def _saddle_or_na(pgf, d):
    try:
        return saddlepoint_tail(pgf, d)[0]
    except BelowMeanError:
        return None


def _analytic_rows(cfg: RunConfig, pgf, thresholds, params, with_netcalc):
    unit = pgf.unit
    ds = [threshold_in_units(t, unit, params.n) for t in thresholds]
    tail = tail_series(pgf, max(ds))
    rows = []
    for t, d in zip(thresholds, ds):
        row = [str(t), str(d) if unit is Unit.FRAMES else NA,
               fmt_prob(tail.at(d)), fmt_prob(_saddle_or_na(pgf, d))]
        if with_netcalc:
            row.append(fmt_prob(netcalc_bound(params, d)) if params.regime is Regime.SYNC else NA)
        rows.append(row)
    return rows


def cmd_pdv(cfg: RunConfig):
    cfg.require("d0")
    params = cfg.system()
    pgf = delay_pgf(params, cfg.precision)
    rows = _analytic_rows(cfg, pgf, cfg.d0, params, with_netcalc=True)
    write_table(cfg, ["d0_cu", "d_frames", "pdv_exact", "pdv_saddlepoint", "pdv_netcalc"], rows,
                {"epsilon": fmt_real(params.epsilon)})


def cmd_age(cfg: RunConfig):
    cfg.require("a0")
    params = cfg.system()
    pgf = peak_age_pgf(params, cfg.precision)
    rows = _analytic_rows(cfg, pgf, cfg.a0, params, with_netcalc=False)
    write_table(cfg, ["a0_cu", "a_frames", "paov_exact", "paov_saddlepoint"], rows,
                {"epsilon": fmt_real(params.epsilon)})


def _require_range(cfg: RunConfig):
    if cfg.epsilon is not None:
        raise ShortPacketError(f"{cfg.command}: --epsilon cannot be combined with a blocklength "
                               "range (epsilon depends on n)")
    cfg.require("n_min", "n_max", "snr_db")


def cmd_sweep(cfg: RunConfig):
    _require_range(cfg)
    cfg.require("lam", "d0")
    if len(cfg.d0) != 1:
        raise ShortPacketError("sweep: give exactly one --d0")
    result = blocklength_sweep(db_to_linear(cfg.snr_db), cfg.k, cfg.lam, cfg.d0[0], cfg.n_min,
                               cfg.n_max, cfg.regime, "delay", cfg.method, cfg.precision)
    rows = [[str(r.n), fmt_real(r.epsilon), str(r.d), fmt_prob(r.pdv), str(int(r.stable))]
            for r in result.rows]
    write_table(cfg, ["n", "epsilon", "d", "pdv", "stable"], rows,
                {"argmin_n": result.argmin.n})


def cmd_throughput(cfg: RunConfig):
    _require_range(cfg)
    cfg.require("d0", "target")
    if len(cfg.d0) != 1:
        raise ShortPacketError("throughput: give exactly one --d0")
    rho, d0 = db_to_linear(cfg.snr_db), cfg.d0[0]
    exact = throughput_vs_blocklength(rho, cfg.k, d0, cfg.target, cfg.n_min, cfg.n_max,
                                      "exact", cfg.regime, cfg.precision)
    best_throughput(exact)  # raises when the target is infeasible at every n
    if cfg.regime is Regime.SYNC:
        bound = throughput_vs_blocklength(rho, cfg.k, d0, cfg.target, cfg.n_min, cfg.n_max,
                                          "netcalc", cfg.regime, cfg.precision)
    else:
        bound = [None] * len(exact)
    rows = []
    for e, b in zip(exact, bound):
        rows.append([str(e.n), fmt_real(e.epsilon), fmt_real(e.lambda_star), fmt_real(e.throughput),
                     fmt_real(b.lambda_star) if b else NA, fmt_real(b.throughput) if b else NA])
    write_table(cfg, ["n", "epsilon", "lambda_star_exact", "throughput_exact",
                      "lambda_star_netcalc", "throughput_netcalc"], rows)


def _sim_config(cfg: RunConfig, params: SystemParams) -> SimConfig:
    return SimConfig(params, cfg.horizon, cfg.warmup, cfg.seed, cfg.replicas, cfg.record_every)


def cmd_simulate(cfg: RunConfig):
    params = SystemParams(cfg.lam, cfg.n, cfg.epsilon_for(cfg.n), cfg.regime, allow_unstable=True) \
        if cfg.n is not None and cfg.lam is not None else cfg.system()
    stats = simulate(_sim_config(cfg, params))
    rows = []
    for metric, ccdf in (("delay", stats.delay_ccdf), ("peak_age", stats.peak_age_ccdf)):
        for d in ccdf.thresholds():
            value = ccdf.at(d)
            if value == 0:
                break
            rows.append([metric, str(d), fmt_prob(value), fmt_prob(float(ccdf.stderr[d - 1]))])
    meta = {
        "unit": stats.unit.value,
        "epsilon": fmt_real(params.epsilon),
        "customers": stats.bulks_observed,
        "mean_delay": fmt_real(stats.mean_delay.value),
        "mean_delay_stderr": fmt_real(stats.mean_delay.stderr),
        "mean_peak_age": fmt_real(stats.mean_peak_age.value),
        "mean_peak_age_stderr": fmt_real(stats.mean_peak_age.stderr),
    }
    write_table(cfg, ["metric", "threshold", "ccdf", "stderr"], rows, meta)


def cmd_compare(cfg: RunConfig):
    cfg.require("d0")
    params = cfg.system()
    pgf = delay_pgf(params, cfg.precision)
    analytic = _analytic_rows(cfg, pgf, cfg.d0, params, with_netcalc=True)
    stats = simulate(_sim_config(cfg, params))
    rows = []
    for t, row in zip(cfg.d0, analytic):
        d = threshold_in_units(t, pgf.unit, params.n)
        ccdf = stats.delay_ccdf
        sim = ccdf.at(d) if d <= ccdf.d_max else 0.0
        err = float(ccdf.stderr[d - 1]) if d <= ccdf.d_max else 0.0
        rows.append(row + [fmt_prob(sim), fmt_prob(err)])
    write_table(cfg, ["d0_cu", "d_frames", "pdv_exact", "pdv_saddlepoint", "pdv_netcalc",
                      "pdv_simulated", "pdv_simulated_stderr"], rows,
                {"epsilon": fmt_real(params.epsilon), "customers": stats.bulks_observed})


COMMANDS = {
    "pdv": cmd_pdv,
    "age": cmd_age,
    "sweep": cmd_sweep,
    "throughput": cmd_throughput,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


# -- argument parsing ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--snr-db", type=float, dest="snr_db", help="SNR in dB (sets epsilon via the normal approximation)")
    p.add_argument("--k", type=int, default=100, help="information bits per packet (default 100)")
    p.add_argument("--epsilon", type=float, help="packet error probability; overrides the channel-derived value")
    p.add_argument("--regime", choices=[r.value for r in Regime], default="sync")
    p.add_argument("--precision", choices=["auto", "double", "extended"], default="auto",
                   help="arithmetic for the generating functions (default auto)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", help="output path (default stdout)")


def _single(p):
    p.add_argument("--n", type=int, help="blocklength in channel uses")
    p.add_argument("--lambda", type=float, dest="lam", help="arrival probability per channel use")


def _range(p):
    p.add_argument("--n-min", type=int, dest="n_min")
    p.add_argument("--n-max", type=int, dest="n_max")


def _sim(p):
    p.add_argument("--horizon", type=int, default=10**8, help="simulated channel uses per replica")
    p.add_argument("--warmup", type=int, help="discarded channel uses (default 10%% of horizon)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--record-every", type=int, default=1, dest="record_every",
                   help="histogram only every K-th arrival, for less correlated CCDF samples (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortpkt",
        description="Delay and peak-age violation probabilities of short-packet ARQ links.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pdv", help="delay violation probability",
                       description="Columns: d0_cu, d_frames (NA for async), pdv_exact, "
                                   "pdv_saddlepoint, pdv_netcalc (sync only).")
    _common(p); _single(p)
    p.add_argument("--d0", type=int, nargs="+", help="latency thresholds in channel uses")

    p = sub.add_parser("age", help="peak-age violation probability",
                       description="Columns: a0_cu, a_frames (NA for async), paov_exact, paov_saddlepoint.")
    _common(p); _single(p)
    p.add_argument("--a0", type=int, nargs="+", help="peak-age thresholds in channel uses")

    p = sub.add_parser("sweep", help="delay violation probability for every blocklength in a range",
                       description="Columns: n, epsilon, d (threshold in the model's unit), pdv, "
                                   "stable (0 rows report pdv = 1).")
    _common(p); _range(p)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--d0", type=int, nargs=1)
    p.add_argument("--method", choices=["exact", "saddlepoint", "netcalc"], default="exact")

    p = sub.add_parser("throughput", help="maximum throughput k*lambda* per blocklength",
                       description="Columns: n, epsilon, lambda_star_exact, throughput_exact, "
                                   "lambda_star_netcalc, throughput_netcalc (bits per channel use; "
                                   "0 where the target is infeasible).")
    _common(p); _range(p)
    p.add_argument("--d0", type=int, nargs=1)
    p.add_argument("--target", type=float, help="violation-probability target")

    p = sub.add_parser("simulate", help="Monte-Carlo delay and peak-age distributions",
                       description="Columns: metric (delay or peak_age), threshold, ccdf = P(X >= "
                                   "threshold), stderr (binomial).  Means are in the header comments.")
    _common(p); _single(p); _sim(p)

    p = sub.add_parser("compare", help="exact vs saddlepoint vs netcalc vs simulation",
                       description="Columns: as pdv plus pdv_simulated and its binomial stderr.")
    _common(p); _single(p); _sim(p)
    p.add_argument("--d0", type=int, nargs="+")
    return parser


_LIST_KEYS = {"d0", "a0"}


def _apply_config(parser: argparse.ArgumentParser, argv, ns):
    values = load_config_file(ns.config)
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = "lam" if key == "lambda" else key
        if dest not in known or dest in ("config", "help"):
            raise ShortPacketError(f"unknown key {key!r} in config file for {ns.command!r}")
        action = known[dest]
        conv = action.type or str
        try:
            if dest in _LIST_KEYS:
                defaults[dest] = [conv(v) for v in raw.replace(",", " ").split()]
            else:
                defaults[dest] = conv(raw)
        except ValueError:
            raise ShortPacketError(f"bad value {raw!r} for {key!r} in config file") from None
        if action.choices is not None and defaults[dest] not in action.choices:
            raise ShortPacketError(f"{key} must be one of {sorted(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    ns = parser.parse_args(argv)
    try:
        if ns.config:
            ns = _apply_config(parser, argv, ns)
        cfg = RunConfig.from_namespace(ns)
        COMMANDS[cfg.command](cfg)
    except (ShortPacketError, OSError) as exc:
        print(f"shortpkt {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands: ``verify`` (identity suite), ``bands``, ``lyapunov``,
``thouless`` and ``spectrum``.  Tables go out as CSV with a ``#``-prefixed
JSON metadata line, or as one JSON document.  Exit codes: 0 success, 1 an
identity failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
import scipy

from . import __version__
from .chain import (BlockChain, assemble_twisted, block_rng, free_chain, load_chain,
                    make_anderson_strip, make_band_random, make_floquet)
from .duality import band_structure, default_eps_circle, thouless_sum
from .errors import BlockTMError
from .numkernel import general_eigen, hermitian_eigenvalues
from .precise import transfer_oracle
from .qmat import q_thouless_sum, singular_exponents
from .resolvent import trace_identity_check
from .suite import DEFAULT_ENERGIES, DEFAULT_TWISTS, run_suite

MODELS = ("free", "anderson", "band-random", "floquet", "file")


class ConfigError(Exception):
    """Invalid command-line configuration (exit code 2)."""


# --- configuration ---------------------------------------------------------

def parse_grid(text: Optional[str], default: Sequence[complex] = ()) -> list:
    """Comma-separated values; ``a:b:n`` expands to n evenly spaced points
    from a to b inclusive.  Values may be complex (``0.3+0.1j``)."""
    if text is None:
        return list(default)
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if ":" in item:
                a, b, n = item.split(":")
                n = int(n)
                if n < 1:
                    raise ValueError("point count must be positive")
                out.extend(np.linspace(complex(a), complex(b), n).tolist())
            else:
                out.append(complex(item))
        except ValueError as exc:
            raise ConfigError(f"bad grid entry {item!r}: {exc}") from exc
    if not out:
        raise ConfigError("grid is empty")
    return [complex(v) for v in out]


def _real(v: complex) -> complex | float:
    return v.real if v.imag == 0 else v


@dataclass
class RunConfig:
    command: str
    model: str = "free"
    chain_file: Optional[str] = None
    N: int = 8
    M: int = 1
    W: float = 1.0
    omega: float = 1.0
    ensemble: str = "GOE"
    seed: int = 0
    realizations: int = 1
    E: list = field(default_factory=list)
    z: list = field(default_factory=list)
    phi_nodes: int = 64
    tol: float = 1e-8
    eps_circle: Optional[float] = None
    out: Optional[str] = None
    format: str = "csv"
    aggregate: bool = False
    sabotage: bool = False

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.model == "file":
            if not self.chain_file:
                raise ConfigError("--model file needs --chain-file")
            if not os.path.isfile(self.chain_file):
                raise ConfigError(f"chain file {self.chain_file!r} does not exist")
        elif self.N < 2 or self.M < 1:
            raise ConfigError("need N >= 2 and M >= 1")
        if self.realizations < 1:
            raise ConfigError("--realizations must be >= 1")
        if self.phi_nodes < 8:
            raise ConfigError("--phi-nodes must be >= 8")
        if not self.tol > 0:
            raise ConfigError("--tol must be positive")
        if self.eps_circle is not None and not self.eps_circle > 0:
            raise ConfigError("--eps-circle must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")

    def echo(self) -> dict:
        """Configuration as recorded in outputs; the output path is left out
        so the same run writes the same bytes wherever it lands."""
        d = asdict(self)
        del d["out"]
        d["E"] = [_jsonable(v) for v in self.E]
        d["z"] = [_jsonable(v) for v in self.z]
        return d

    @property
    def random_model(self) -> bool:
        return self.model in ("anderson", "band-random", "floquet")


def _jsonable(v):
    v = complex(v)
    return v.real if v.imag == 0 else [v.real, v.imag]


def realization_seed(seed: int, r: int) -> int:
    """Seed of realization ``r``, independent of how many are run."""
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1)[0])


def build_chain(cfg: RunConfig, r: int = 0) -> BlockChain:
    s = realization_seed(cfg.seed, r)
    if cfg.model == "free":
        return free_chain(cfg.N, cfg.M)
    if cfg.model == "file":
        return load_chain(cfg.chain_file)
    if cfg.model == "anderson":
        return make_anderson_strip(cfg.M, cfg.N, cfg.W, seed=s)
    if cfg.model == "band-random":
        return make_band_random(cfg.M, cfg.N, cfg.ensemble, seed=s)
    # floquet: GOE H0 of width W, identity coupling
    A = block_rng(s, 0, 0).standard_normal((cfg.M, cfg.M))
    H0 = 0.5 * cfg.W * (A + A.T)
    return make_floquet(H0, np.eye(cfg.M), cfg.omega, cfg.N)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BLOCKTM_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map over a thread pool capped by BLOCKTM_THREADS."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- output ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+.17g}j"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metadata(cfg: RunConfig) -> dict:
    return {"command": cfg.command, "config": cfg.echo(),
            "versions": {"blocktm": __version__, "mpmath": mpmath.__version__,
                         "numpy": np.__version__, "scipy": scipy.__version__}}


def render(cfg: RunConfig, columns: Sequence[str], rows: Sequence[Sequence],
           extra: Optional[dict] = None) -> str:
    """CSV (metadata line, header, rows, optional ``#``-headed extra tables)
    or a single JSON document."""
    meta = metadata(cfg)
    if cfg.format == "json":
        doc = {"meta": meta, "columns": list(columns),
               "rows": [[_json_cell(v) for v in r] for r in rows]}
        for name, (cols, sub) in (extra or {}).items():
            doc[name] = {"columns": list(cols), "rows": [[_json_cell(v) for v in r] for r in sub]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    for name, (cols, sub) in (extra or {}).items():
        buf.write(f"# {name}\n")
        w.writerow(cols)
        for r in sub:
            w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_cell(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def emit(cfg: RunConfig, text: str) -> None:
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- commands ----------------------------------------------------------------

def cmd_verify(cfg: RunConfig) -> int:
    """Identity suite on realization 0 over the E and z grids."""
    chain = build_chain(cfg)
    energies = cfg.E or list(DEFAULT_ENERGIES)
    twists = cfg.z or list(DEFAULT_TWISTS)
    report = run_suite(chain, energies, twists, tol=cfg.tol, sabotage=cfg.sabotage)
    data = report.to_dict()
    # sign audit of the trace formula: which sign of the derivative term fits
    audit = []
    for E in energies:
        for z in twists:
            try:
                t = trace_identity_check(chain, E, z)
            except BlockTMError:
                continue
            audit.append(t.residual_plus)
    data["trace_plus_sign_min_residual"] = min(audit) if audit else None
    if cfg.format == "json":
        text = json.dumps({"meta": metadata(cfg), "report": data}, sort_keys=True, indent=1) + "\n"
    else:
        rows = [(k, v, v <= cfg.tol) for k, v in data["residuals"].items()]
        rows += [(f"error: {e}", math.inf, False) for e in data["errors"]]
        text = render(cfg, ("identity", "max_residual", "pass"), rows)
    emit(cfg, text)
    return 0 if report.passed else 1


def cmd_bands(cfg: RunConfig) -> int:
    chain = build_chain(cfg)
    bs = band_structure(chain, cfg.phi_nodes)
    rows = [(float(phi), k, float(bs.levels[i, k]))
            for i, phi in enumerate(bs.phi_grid) for k in range(bs.levels.shape[1])]
    bands = [(k, float(lo), float(hi)) for k, (lo, hi) in enumerate(bs.bands)]
    extra = {"band intervals": (("k", "E_min", "E_max"), bands)}
    emit(cfg, render(cfg, ("phi", "k", "E_k"), rows, extra))
    return 0


def _realizations(cfg: RunConfig) -> list:
    return list(range(cfg.realizations if cfg.random_model else 1))


def cmd_lyapunov(cfg: RunConfig) -> int:
    if not cfg.E:
        raise ConfigError("lyapunov needs a non-empty --E grid")
    jobs = [(r, E) for r in _realizations(cfg) for E in cfg.E]
    chains = {r: build_chain(cfg, r) for r in _realizations(cfg)}

    def one(job):
        r, E = job
        return singular_exponents(chains[r], E)

    results = parallel_map(one, jobs)
    rows = []
    for (r, E), res in zip(jobs, results):
        N = chains[r].N
        for a, lam in enumerate(res.values):
            rows.append((_real(E), r, a, float(lam) / N, res.converged))
    extra = None
    if cfg.aggregate:
        agg = []
        for E in cfg.E:
            vals = np.array([res.values / chains[r].N
                             for (r, e), res in zip(jobs, results) if e == E])
            n = len(vals)
            mean = vals.mean(axis=0)
            err = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, math.nan)
            agg += [(_real(E), a, float(mean[a]), float(err[a]), n) for a in range(len(mean))]
        extra = {"aggregate": (("E", "a", "mean", "stderr", "count"), agg)}
    emit(cfg, render(cfg, ("E", "realization", "a", "lambda_over_N", "converged"), rows, extra))
    return 0


def cmd_thouless(cfg: RunConfig) -> int:
    if not cfg.E:
        raise ConfigError("thouless needs a non-empty --E grid")
    if any(E.imag != 0 for E in cfg.E):
        raise ConfigError("thouless needs real energies")
    jobs = [(r, E.real) for r in _realizations(cfg) for E in cfg.E]
    chains = {r: build_chain(cfg, r) for r in _realizations(cfg)}

    def one(job):
        r, E = job
        out = []
        for fn in (thouless_sum, q_thouless_sum):
            try:
                res = fn(chains[r], E, quad_tol=cfg.tol, nodes=cfg.phi_nodes,
                         eps_circle=cfg.eps_circle)
                out += [res.lhs, res.rhs, res.residual, res.converged, "ok"]
            except BlockTMError as exc:
                out += [math.nan, math.nan, math.nan, False, type(exc).__name__]
        return out

    results = parallel_map(one, jobs)
    rows = [(E, r, *res) for (r, E), res in zip(jobs, results)]
    cols = ("E", "realization", "lhs", "rhs", "residual", "converged", "status",
            "q_lhs", "q_rhs", "q_residual", "q_converged", "q_status")
    emit(cfg, render(cfg, cols, rows))
    return 0


def _dual_mismatch(chain: BlockChain, E: complex, z: complex) -> float:
    """Distance from z to the spectrum of T(E), relative to |z|."""
    w = transfer_oracle(chain, E).eigvals()
    return float(np.min(np.abs(w - z)) / abs(z))


def cmd_spectrum(cfg: RunConfig) -> int:
    """Eigenvalues of T(E) over the E grid and of H(z) over the z grid; each
    eigenvalue E of H(z) is cross-listed against the spectrum of T(E)."""
    if not cfg.E and not cfg.z:
        raise ConfigError("spectrum needs an --E grid, a --z grid or both")
    chain = build_chain(cfg)

    eps = cfg.eps_circle if cfg.eps_circle is not None else default_eps_circle(chain)

    def t_rows(E):
        w = transfer_oracle(chain, E).eigvals()
        return [("T", E.real, E.imag, t.real, t.imag, i, abs(abs(t) - 1) <= eps, math.nan)
                for i, t in enumerate(w)]

    def h_rows(z):
        H = assemble_twisted(chain, z).entries
        if abs(abs(z) - 1) < 1e-14:
            lv = hermitian_eigenvalues(H).astype(complex)
        else:
            lv = general_eigen(H)
        return [("H", e.real, e.imag, z.real, z.imag, i, abs(abs(z) - 1) <= 1e-14,
                 _dual_mismatch(chain, e, z)) for i, e in enumerate(lv)]

    rows = []
    for part in parallel_map(t_rows, cfg.E):
        rows += part
    for part in parallel_map(h_rows, cfg.z):
        rows += part
    cols = ("kind", "E_re", "E_im", "z_re", "z_im", "index", "unit_circle", "dual_mismatch")
    emit(cfg, render(cfg, cols, rows))
    return 0


COMMANDS = {"verify": cmd_verify, "bands": cmd_bands, "lyapunov": cmd_lyapunov,
            "thouless": cmd_thouless, "spectrum": cmd_spectrum}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blocktm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        s.add_argument("--model", default="free", choices=MODELS)
        s.add_argument("--chain-file")
        s.add_argument("--N", type=int, default=8)
        s.add_argument("--M", type=int, default=1)
        s.add_argument("--W", type=float, default=1.0)
        s.add_argument("--omega", type=float, default=1.0)
        s.add_argument("--ensemble", default="GOE", choices=("GOE", "GUE"))
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--realizations", type=int, default=1)
        s.add_argument("--E", help="energies: comma list and/or a:b:n ranges")
        s.add_argument("--z", help="twists: comma list and/or a:b:n ranges")
        s.add_argument("--phi-nodes", type=int, default=64)
        s.add_argument("--tol", type=float, default=1e-8)
        s.add_argument("--eps-circle", type=float)
        s.add_argument("--out")
        s.add_argument("--format", default="json" if name == "verify" else "csv",
                       choices=("csv", "json"))
        if name == "lyapunov":
            s.add_argument("--aggregate", action="store_true",
                           help="append mean and standard error over realizations")
        if name == "verify":
            s.add_argument("--sabotage", action="store_true",
                           help="perturb the determinant duality (harness self-test)")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    model = args.model
    if args.chain_file and model == "free":
        model = "file"
    cfg = RunConfig(
        command=args.command, model=model, chain_file=args.chain_file, N=args.N, M=args.M,
        W=args.W, omega=args.omega, ensemble=args.ensemble, seed=args.seed,
        realizations=args.realizations, E=parse_grid(args.E), z=parse_grid(args.z),
        phi_nodes=args.phi_nodes, tol=args.tol, eps_circle=args.eps_circle, out=args.out,
        format=args.format, aggregate=getattr(args, "aggregate", False),
        sabotage=getattr(args, "sabotage", False))
    cfg.validate()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"blocktm: configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid chain input (non-Hermitian block, singular coupling, ...)
        print(f"blocktm: configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except BlockTMError as exc:
        print(f"blocktm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

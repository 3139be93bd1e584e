"""Chain directory persistence: manifest.json plus per-parameter CSV matrices.

One CSV row per stored draw; floats are written with 17 significant digits so
values round-trip exactly and identical runs produce byte-identical files.
Buffered rows are flushed periodically so an interrupted run leaves a
readable partial chain behind.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ChainStateError
from .sampler import PosteriorChain

FORMAT_VERSION = 1
_FLOAT_FMT = "%.17g"

_FILES = ("eta", "beta", "xi", "sigma_k2", "sigma_xi2")


def _headers(T: int, r: int, p: int, xi_offsets: dict[int, tuple[int, int]]):
    xi_cols = []
    for t in sorted(xi_offsets):
        lo, hi = xi_offsets[t]
        xi_cols.extend(f"t{t}_i{i}" for i in range(hi - lo))
    return {
        "eta": [f"t{t}_k{k}" for t in range(1, T + 1) for k in range(r)],
        "beta": [f"t{t}_j{j}" for t in range(1, T + 1) for j in range(p)],
        "xi": xi_cols,
        "sigma_k2": ["sigma_k2"],
        "sigma_xi2": [f"t{t}" for t in range(1, T + 1)],
    }


class ChainWriter:
    """Streams stored draws into a chain directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._buffers: dict[str, list[np.ndarray]] = {name: [] for name in _FILES}
        self._handles = None
        self._manifest: dict = {"format_version": FORMAT_VERSION}

    def configure(self, **manifest_fields) -> None:
        """Record run metadata (seed, dims, sweep order) before draws arrive."""
        self._manifest.update(manifest_fields)

    def _open(self, T: int, r: int, p: int) -> None:
        xi_offsets = {
            int(t): tuple(v) for t, v in self._manifest.get("xi_offsets", {}).items()
        }
        headers = _headers(T, r, p, xi_offsets)
        self._handles = {}
        for name in _FILES:
            fh = (self.directory / f"{name}.csv").open("w", encoding="utf-8")
            fh.write(",".join(headers[name]) + "\n")
            self._handles[name] = fh

    def append_draw(self, eta, beta, xi, sigma_k2, sigma_xi2) -> None:
        if self._handles is None:
            T, r = eta.shape
            self._open(T, r, beta.shape[1])
        self._buffers["eta"].append(np.ravel(eta))
        self._buffers["beta"].append(np.ravel(beta))
        self._buffers["xi"].append(np.ravel(xi))
        self._buffers["sigma_k2"].append(np.atleast_1d(sigma_k2))
        self._buffers["sigma_xi2"].append(np.ravel(sigma_xi2))

    def flush(self, completed_iterations: int | None = None) -> None:
        if self._handles is not None:
            for name in _FILES:
                rows = self._buffers[name]
                if rows:
                    np.savetxt(self._handles[name], np.vstack(rows), fmt=_FLOAT_FMT, delimiter=",")
                    self._handles[name].flush()
                self._buffers[name] = []
        if completed_iterations is not None:
            self._manifest["completed_iterations"] = completed_iterations
        self._write_manifest()

    def _write_manifest(self) -> None:
        path = self.directory / "manifest.json"
        path.write_text(json.dumps(self._manifest, sort_keys=True, indent=2) + "\n")

    def finalize(self, chain: PosteriorChain) -> None:
        self._manifest.update(
            {
                "seed": chain.seed,
                "iterations": chain.iterations,
                "burn_in": chain.burn_in,
                "thin": chain.thin,
                "num_draws": chain.num_draws,
                "completed_iterations": chain.iterations,
                "xi_offsets": {str(t): list(v) for t, v in chain.xi_offsets.items()},
                **{k: v for k, v in chain.meta.items()},
            }
        )
        self.flush()
        for fh in (self._handles or {}).values():
            fh.close()
        self._handles = None


def write_chain(chain: PosteriorChain, directory: str | Path) -> Path:
    """Persist a finished in-memory chain in one shot."""
    writer = ChainWriter(directory)
    writer.configure(
        seed=chain.seed,
        iterations=chain.iterations,
        burn_in=chain.burn_in,
        thin=chain.thin,
        xi_offsets={str(t): list(v) for t, v in chain.xi_offsets.items()},
        **chain.meta,
    )
    for j in range(chain.num_draws):
        writer.append_draw(
            chain.eta[j], chain.beta[j], chain.xi[j], chain.sigma_k2[j], chain.sigma_xi2[j]
        )
    writer.finalize(chain)
    return Path(directory)


def _load_csv(path: Path, allow_empty_cols: bool) -> np.ndarray:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        ncols = len(header.split(",")) if header else 0
        if ncols == 0 and allow_empty_cols:
            return np.zeros((0, 0))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, ncols))
    return data


def read_chain(directory: str | Path) -> PosteriorChain:
    """Load a (possibly partial) chain directory back into memory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ChainStateError(f"no chain manifest at {directory}")
    manifest = json.loads(manifest_path.read_text())
    T = manifest["T"]
    r = manifest["r"]
    p = manifest["p"]
    xi_offsets = {int(t): tuple(v) for t, v in manifest["xi_offsets"].items()}
    try:
        eta = _load_csv(directory / "eta.csv", False)
        beta = _load_csv(directory / "beta.csv", False)
        xi = _load_csv(directory / "xi.csv", True)
        sigma_k2 = _load_csv(directory / "sigma_k2.csv", False)
        sigma_xi2 = _load_csv(directory / "sigma_xi2.csv", False)
    except FileNotFoundError as exc:
        raise ChainStateError(f"chain directory {directory} is incomplete: {exc}") from None
    j = min(len(eta), len(beta), len(xi) if xi.shape[1] else len(eta), len(sigma_k2), len(sigma_xi2))
    n = sum(hi - lo for lo, hi in xi_offsets.values())
    meta = {
        k: manifest[k]
        for k in ("sweep_order", "move_types", "r", "p", "T", "n")
        if k in manifest
    }
    return PosteriorChain(
        eta=eta[:j].reshape(j, T, r),
        beta=beta[:j].reshape(j, T, p),
        xi=xi[:j].reshape(j, n) if n else np.zeros((j, 0)),
        sigma_k2=sigma_k2[:j, 0],
        sigma_xi2=sigma_xi2[:j].reshape(j, T),
        xi_offsets=xi_offsets,
        seed=manifest["seed"],
        iterations=manifest["iterations"],
        burn_in=manifest["burn_in"],
        thin=manifest["thin"],
        meta=meta,
    )

import numpy as np
import pytest

from arealdlm.chainio import ChainWriter, read_chain, write_chain
from arealdlm.errors import ChainStateError
from arealdlm.predict import simulate
from arealdlm.sampler import Hyperparams, gibbs_run

from util import toy_structures


@pytest.fixture(scope="module")
def small_chain():
    _, _, design_set, basis, prior = toy_structures(n_units=6, T=2, p=2, r=2, seed=40)
    truth = simulate(design_set, basis, prior, np.array([0.2, -0.1]), 1.0, 0.05, 0.1, seed=41)
    chain = gibbs_run(
        truth.observations, design_set, basis, prior, Hyperparams(),
        iterations=250, burn_in=50, seed=42,
    )
    return chain


def assert_chains_equal(a, b):
    assert np.array_equal(a.eta, b.eta)
    assert np.array_equal(a.beta, b.beta)
    assert np.array_equal(a.xi, b.xi)
    assert np.array_equal(a.sigma_k2, b.sigma_k2)
    assert np.array_equal(a.sigma_xi2, b.sigma_xi2)
    assert a.xi_offsets == b.xi_offsets
    assert (a.seed, a.iterations, a.burn_in, a.thin) == (b.seed, b.iterations, b.burn_in, b.thin)


class TestRoundTrip:
    def test_write_then_read(self, small_chain, tmp_path):
        write_chain(small_chain, tmp_path / "chain")
        loaded = read_chain(tmp_path / "chain")
        assert_chains_equal(small_chain, loaded)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ChainStateError, match="no chain manifest"):
            read_chain(tmp_path / "nope")

    def test_streaming_matches_one_shot(self, tmp_path):
        _, _, design_set, basis, prior = toy_structures(n_units=6, T=2, p=2, r=2, seed=43)
        truth = simulate(design_set, basis, prior, np.array([0.0, 0.0]), 1.0, 0.1, 0.1, seed=44)
        writer = ChainWriter(tmp_path / "streamed")
        chain = gibbs_run(
            truth.observations, design_set, basis, prior, Hyperparams(),
            iterations=230, burn_in=30, seed=45, writer=writer, flush_every=100,
        )
        loaded = read_chain(tmp_path / "streamed")
        assert_chains_equal(chain, loaded)

    def test_partial_flush_is_readable(self, small_chain, tmp_path):
        # simulate an interrupted run: flush mid-way, never finalize
        writer = ChainWriter(tmp_path / "partial")
        writer.configure(
            seed=small_chain.seed,
            iterations=small_chain.iterations,
            burn_in=small_chain.burn_in,
            thin=small_chain.thin,
            xi_offsets={str(t): list(v) for t, v in small_chain.xi_offsets.items()},
            **small_chain.meta,
        )
        for j in range(120):
            writer.append_draw(
                small_chain.eta[j],
                small_chain.beta[j],
                small_chain.xi[j],
                small_chain.sigma_k2[j],
                small_chain.sigma_xi2[j],
            )
            if (j + 1) % 100 == 0:
                writer.flush(completed_iterations=j + 1)
        partial = read_chain(tmp_path / "partial")
        assert partial.num_draws == 100  # only the flushed rows are on disk
        assert np.array_equal(partial.eta, small_chain.eta[:100])

    def test_byte_identical_for_same_chain(self, small_chain, tmp_path):
        write_chain(small_chain, tmp_path / "a")
        write_chain(small_chain, tmp_path / "b")
        for name in ("eta", "beta", "xi", "sigma_k2", "sigma_xi2"):
            assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (
                tmp_path / "b" / f"{name}.csv"
            ).read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (
            tmp_path / "b" / "manifest.json"
        ).read_bytes()

    def test_manifest_fields(self, small_chain, tmp_path):
        import json

        write_chain(small_chain, tmp_path / "chain")
        manifest = json.loads((tmp_path / "chain" / "manifest.json").read_text())
        for key in ("format_version", "seed", "iterations", "burn_in", "thin",
                    "sweep_order", "move_types", "r", "p", "T", "n"):
            assert key in manifest
        assert manifest["move_types"] == "gibbs"
        assert manifest["completed_iterations"] == small_chain.iterations

import numpy as np
import numpy.testing as npt
import pytest

from prcurves import losses, verify
from prcurves.cli import EXIT_OK, EXIT_VERIFY, main


def broken_tailr(token_prob, gamma):
    # denominator fault: gamma + q instead of gamma + (1 - gamma) q
    q = np.asarray(token_prob, dtype=np.float64)
    return q / (gamma + q)


class TestOracles:
    def test_tailr_fixed_point_converges(self):
        p, gamma = verify.TAILR_CASES[2]
        npt.assert_allclose(verify.tailr_fixed_point(p, gamma), losses.tailr_optimum(p, gamma), atol=1e-4)

    def test_capped_projection(self, rng):
        for _ in range(50):
            y = rng.standard_normal(6)
            cap, total = 0.3, 1.0
            x = verify._project_capped_simplex(y, total, cap)
            npt.assert_allclose(x.sum(), total, atol=1e-12)
            assert np.all(x >= 0) and np.all(x <= cap + 1e-15)
            # optimality: no feasible pairwise shift moves x closer to y
            g = x - y
            free = (x > 1e-12) & (x < cap - 1e-12)
            if free.sum() > 1:
                npt.assert_allclose(g[free], g[free][0], atol=1e-9)

    def test_truncr_oracle_matches_closed_form(self):
        p, kept = verify.TRUNCR_CASES[0]
        q, delta = verify.truncr_projected_gradient(p, kept, steps=1500)
        npt.assert_allclose(q, losses.truncr_optimum(p, np.array(kept))[0], atol=1e-4)

    def test_bruteforce_pass_at_k(self):
        assert verify.pass_at_k_bruteforce(5, 2, 2) == pytest.approx(0.7)

    def test_crash_is_failure(self, monkeypatch):
        def boom():
            raise RuntimeError("kaput")
        monkeypatch.setattr(verify, "PROPERTIES", [boom])
        (res,) = verify.run_all()
        assert not res.passed and "kaput" in res.detail and res.line().startswith("FAIL")


class TestMutation:
    # only the properties that read the loss weights, to keep this quick; the
    # full suite runs in the acceptance tests
    props = [verify.check_loss_identities, verify.check_tailr_fixed_point, verify.check_pass_at_k]

    def test_clean(self, monkeypatch, capsys):
        monkeypatch.setattr(verify, "PROPERTIES", self.props)
        assert main(["verify"]) == EXIT_OK
        assert "3/3 properties passed" in capsys.readouterr().out

    def test_tailr_fault_detected(self, monkeypatch, capsys):
        monkeypatch.setattr(verify, "PROPERTIES", self.props)
        monkeypatch.setattr(losses, "weights_tailr", broken_tailr)
        assert main(["verify"]) == EXIT_VERIFY
        out = capsys.readouterr().out
        assert "FAIL [7] tailr_fixed_point" in out
        assert out.strip().splitlines()[-1] == "failed: tailr_fixed_point"

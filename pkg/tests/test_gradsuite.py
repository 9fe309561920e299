import pytest

from echoview import cli, gradsuite
from echoview.autodiff import ops

QUICK = ["gradcheck", "--instances", "4", "--e2e-instances", "1"]


def test_every_case_passes_quickly():
    results = gradsuite.run_suite(instances=5, e2e_instances=1)
    assert {r.name for r in results} >= set(gradsuite.CASES)
    for r in results:
        assert r.passed, (r.name, r.worst)
        assert r.checks > 0


def test_cli_reports_tolerance(capsys):
    assert cli.main(QUICK) == 0
    out = capsys.readouterr().out
    assert "tol=0.0001" in out and "h=1e-05" in out
    assert out.count("PASS") == len(gradsuite.CASES) + 1


@pytest.mark.parametrize("op_name,scale", [("relu", 1.01), ("conv2d", 0.5), ("log_softmax", -1.0)])
def test_corrupted_backward_rule_fails(monkeypatch, capsys, op_name, scale):
    real = ops.make_result

    def corrupt(op, data, inputs, backward_fn):
        if op != op_name:
            return real(op, data, inputs, backward_fn)

        def bad(g):
            return tuple(None if x is None else x * scale for x in backward_fn(g))

        return real(op, data, inputs, bad)

    monkeypatch.setattr(ops, "make_result", corrupt)
    assert cli.main(QUICK) == 2
    err = capsys.readouterr().err
    assert "worst offender" in err


def test_random_labels_respect_class_limit(rng):
    for _ in range(50):
        labs = gradsuite.random_contrastive_labels(rng, 4, 4)
        assert len(labs) == 8 and len(set(labs)) <= 4
        assert labs[:4] == labs[4:]

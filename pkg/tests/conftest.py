import numpy as np
import pytest

import invariants
from fpindex import indexvec
from fpindex.corpus import training_set
from fpindex.synthgen import finger_seeds, gen_finger, gen_impression
from fpindex.training import train_models

indexvec.observers.append(invariants.check_vector)
indexvec.membership_observers.append(invariants.check_membership)


@pytest.fixture(scope="session")
def small_corpus():
    """10 synthetic fingers x 3 impressions: [(finger, [impression, ...]), ...]."""
    fingers = [gen_finger(s) for s in finger_seeds(77, 10)]
    return [(f, [gen_impression(f, j) for j in range(3)]) for f in fingers]


@pytest.fixture(scope="session")
def small_models(small_corpus):
    """Transform and a 24-word codebook trained on ``small_corpus``."""
    samples = [(str(f.seed), imp.image, imp.minutiae, imp.gt_ids) for f, imps in small_corpus for imp in imps]
    feats, ids = training_set(samples)
    t, cb, _ = train_models(feats, ids, k=24, seed=3)
    return t, cb


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(acceptance_log.results):
        ok, detail = acceptance_log.results[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    s = invariants.stats
    tr.write_line(f"index-vector invariants over the whole session: vectors={s['vectors']} membership rows={s['memberships']} "
                  f"worst |sum F|/K={s['worst_sum']:.2e} worst rel |F|^2 err={s['worst_norm']:.2e} "
                  f"worst row-sum err={s['worst_row']:.2e}")

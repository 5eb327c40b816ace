"""Shared fixtures; the desk pretraining run is cached under _artifacts.

The first session that needs the desk checkpoint trains it (roughly fifteen
minutes on one core) and stores the run directory together with a
fingerprint of the profile; later sessions reuse it as long as the profile
and seed are unchanged.
"""

import json
import os
import time

import numpy as np
import pytest

from tabicl.pretrainer import get_profile, load_checkpoint, run_curriculum

ARTIFACTS = os.path.join(os.path.dirname(__file__), "_artifacts")
DESK_SEED = 0


def _profile_fingerprint(profile, seed):
    fp = {
        "seed": seed,
        "model": profile.model.to_dict(),
        "prior": profile.prior.to_dict(),
        "stages": [[s.stage_id, s.n_b, list(s.size_law), s.steps,
                    s.datasets_per_step, s.trainable, vars(s.schedule)]
                   for s in profile.stages],
    }
    return json.loads(json.dumps(fp))


def ensure_desk_run():
    profile = get_profile("desk")
    out = os.path.join(ARTIFACTS, "desk_seed0")
    marker = os.path.join(out, "fingerprint.json")
    want = _profile_fingerprint(profile, DESK_SEED)
    if os.path.exists(marker):
        with open(marker) as fh:
            if json.load(fh) == want:
                return out
    t0 = time.time()
    run_curriculum(profile, DESK_SEED, out, log_every=50)
    with open(os.path.join(out, "duration.json"), "w") as fh:
        json.dump({"train_minutes": (time.time() - t0) / 60.0}, fh)
    with open(marker, "w") as fh:
        json.dump(want, fh, indent=2)
    return out


@pytest.fixture(scope="session")
def desk_run_dir():
    return ensure_desk_run()


@pytest.fixture(scope="session")
def desk_model(desk_run_dir):
    model, _ = load_checkpoint(os.path.join(desk_run_dir, "model.ckpt"))
    return model


def make_blobs(n_train, n_test, rng, margin_sigmas=2.0, dim=2, sigma=1.0):
    """Two Gaussian blobs whose 1-sigma shells are `margin_sigmas` apart."""
    sep = (margin_sigmas + 2.0) * sigma
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    n = n_train + n_test
    y = rng.integers(0, 2, size=n)
    if y[:n_train].min() == y[:n_train].max():
        y[0] = 1 - y[0]
    X = rng.standard_normal((n, dim)) * sigma + np.outer(y, direction) * sep
    return X.astype(np.float32), y[:n_train], y[n_train:]

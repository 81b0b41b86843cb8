"""Zoo access by threat model and attacker id.

The index path comes from the ``index`` argument or ``$XT_ZOO_INDEX``.
"""

import os

from ._core import ZooIndex


def _index(index=None):
    path = index or os.environ.get("XT_ZOO_INDEX")
    if not path:
        raise ValueError("no zoo index: pass index= or set XT_ZOO_INDEX")
    return ZooIndex.load(os.fspath(path))


def list_threat_model(index=None):
    return _index(index).list_threat_models()


def list_attacker(threat_model, index=None):
    return _index(index).list_attackers(threat_model)


def load_attacker(threat_model, attacker_id, index=None):
    """Returns a callable mapping images in [0, 1] ([3,H,W] or [B,3,H,W]) to
    perturbed images. The underlying perturbation is at ``.perturbation``."""
    p = _index(index).load_attacker(threat_model, attacker_id)

    def attack(images):
        return p(images)

    attack.perturbation = p
    return attack

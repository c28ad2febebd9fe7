"""Cross-component check: weights trained by the TypeScript trainer load here.

The trainer (trainer/) talks to this package only through files: PNLKW1
weight blobs plus a JSON manifest that records, for each exported file, the
pooling mode, a fixture cloud, and the feature vector the trainer computed
for that cloud. This suite replays the manifest against our reader and
encoder. Skipped when the trainer fixtures have not been generated
(`npm run fixtures` in trainer/).
"""

import json
from pathlib import Path

import numpy as np
import pytest

from pointreg import encoder

FIXTURES = Path(__file__).resolve().parent.parent / "trainer" / "fixtures"
MANIFEST = FIXTURES / "manifest.json"

pytestmark = pytest.mark.skipif(
    not MANIFEST.is_file(), reason="trainer fixtures not generated"
)


def _entries():
    with open(MANIFEST) as fh:
        manifest = json.load(fh)
    entries = manifest["entries"]
    assert entries, "manifest exists but lists no weight files"
    return entries


def test_manifest_covers_both_poolings():
    poolings = {entry["pooling"] for entry in _entries()}
    assert poolings == {"max", "avg"}


def test_s1_trainer_weights_reproduce_features(capsys):
    worst = 0.0
    details = []
    for entry in _entries():
        # load_weights verifies the trailing CRC32; a corrupt or truncated
        # file raises instead of returning.
        weights = encoder.load_weights(FIXTURES / entry["weightsFile"])
        assert weights.pooling == entry["pooling"]
        assert list(weights.dims) == list(entry["dims"])

        cloud = np.asarray(entry["cloud"], dtype=float)
        feature = encoder.encode(weights, cloud)
        recorded = np.asarray(entry["feature"], dtype=float)
        assert feature.shape == recorded.shape
        gap = float(np.abs(feature - recorded).max())
        worst = max(worst, gap)
        details.append(f"{entry['name']} {gap:.2e}")

    ok = worst <= 1e-6
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"S1 cross-component weight handoff: {status} "
              f"(per-channel gap {', '.join(details)}; all <= 1e-6)")
    assert ok

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TRAIN_SEEDS = [i * 37 + 11 for i in range(1, 11)]


@pytest.fixture(scope="session")
def trained():
    """Spatial and temporal networks trained on the ten-identity crop set (a few minutes)."""
    from dmantrack.dman import san as S, tan as T
    from dmantrack.dman.data import IdentityDataset
    from dmantrack.dman.model import DmanModel
    from dmantrack.dman.train import train_san, train_tan

    ds = IdentityDataset(TRAIN_SEEDS)
    start = time.monotonic()
    scfg = S.SanConfig()
    sp, san_losses = train_san(ds, scfg, steps=900, lr=1e-3, seed=0)
    tcfg = T.TanConfig(d_in=scfg.d_c)
    tp, tan_losses = train_tan(ds, sp, scfg, tcfg, steps=400, lr=1e-3, pool=1024)
    seconds = time.monotonic() - start
    return dict(dataset=ds, san_params=sp, san_cfg=scfg, tan_params=tp, tan_cfg=tcfg,
                model=DmanModel(sp, scfg, tp, tcfg), seconds=seconds,
                san_losses=san_losses, tan_losses=tan_losses)

import numpy as np

from semexp.frontiers import RegionGrid, detect_frontiers
from semexp.geometry import Box, Pose
from semexp.viewpoints import Viewpoint

from helpers import set_free, set_occupied, synthetic_grid


def test_fully_unknown_grid_has_no_frontiers():
    g = synthetic_grid((6, 6, 3))
    assert detect_frontiers(g.snapshot()) == set()


def test_single_free_voxel_is_frontier():
    g = synthetic_grid((5, 5, 3))
    set_free(g, (2, 2, 1))
    assert detect_frontiers(g.snapshot()) == {(2, 2, 1)}


def test_half_known_room_matches_bruteforce():
    g = synthetic_grid((10, 8, 4))
    set_free(g, np.s_[:5, :, :])
    snap = g.snapshot()
    got = detect_frontiers(snap)

    want = set()
    classes = snap.classes
    for i in range(10):
        for j in range(8):
            for k in range(4):
                if classes[i, j, k] != 1:
                    continue
                for di, dj, dk in [(1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
                    ni, nj, nk = i + di, j + dj, k + dk
                    if 0 <= ni < 10 and 0 <= nj < 8 and 0 <= nk < 4 \
                            and classes[ni, nj, nk] == 0:
                        want.add((i, j, k))
                        break
    assert got == want


def test_occupied_cells_are_not_frontiers():
    g = synthetic_grid((5, 5, 1))
    set_free(g, np.s_[:3, :, :])
    set_occupied(g, (2, 2, 0))
    got = detect_frontiers(g.snapshot())
    assert (2, 2, 0) not in got


def test_slab_restriction_and_cluster_filter():
    g = synthetic_grid((8, 8, 5))
    set_free(g, np.s_[:4, :, :])
    snap = g.snapshot()
    all_layers = detect_frontiers(snap)
    slab_only = detect_frontiers(snap, slab_z=2)
    assert slab_only <= all_layers
    assert all(v[2] == 2 for v in slab_only)
    # a single isolated frontier cell is filtered as noise
    g2 = synthetic_grid((8, 8, 5))
    set_free(g2, (3, 3, 2))
    assert detect_frontiers(g2.snapshot(), slab_z=2, min_cluster=3) == set()


def region_grid():
    return RegionGrid(Box((0, 0, 0), (20, 20, 2)), tile=10.0)


def test_region_tiling_is_partition():
    rg = region_grid()
    assert len(rg.regions) == 4
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, y = rng.uniform(0, 19.999, 2)
        owners = [r for r in rg.regions if r.contains_xy(x, y)]
        assert len(owners) == 1
        assert owners[0] is rg.region_of_xy(x, y)


def test_refresh_sets_activity_flags():
    g = synthetic_grid((200, 200, 16))
    set_free(g, np.s_[:100, :, :])
    snap = g.snapshot()
    rg = region_grid()

    rg.refresh(snap, set(), [])
    assert rg.all_inactive()

    frontier = {(50, 50, 8)}  # center (5.05, 5.05) -> region 0
    rg.refresh(snap, frontier, [])
    assert rg.regions[0].active
    assert not rg.regions[1].active

    vp = Viewpoint(pose=Pose(15.0, 4.0, 0.8), kind="semantic", score=10.0,
                   object_id=0, sector=1, obligations=frozenset({(0, 1)}))
    rg.refresh(snap, set(), [vp])
    assert rg.regions[1].active  # semantic viewpoint alone keeps it active
    assert not rg.regions[0].active


def test_refresh_idempotent_without_map_change():
    g = synthetic_grid((200, 200, 16))
    set_free(g, np.s_[:100, :, :])
    snap = g.snapshot()
    rg = region_grid()
    frontier = {(50, 50, 8), (150, 50, 8)}
    rg.refresh(snap, frontier, [])
    flags1 = [r.active for r in rg.regions]
    rg.refresh(snap, frontier, [])
    flags2 = [r.active for r in rg.regions]
    assert flags1 == flags2

import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weldbench.meshdd import (
    CORNERS,
    DofMap,
    build_hex_mesh,
    build_restrictions,
    classify_interface,
    count_components,
    count_dofs,
    dof,
    extend_overlap,
    node_dofs,
    partition,
    set_overlap,
)


def brute_force_overlap(mesh, owner, s, k):
    """BFS over the element graph (adjacent = sharing a node)."""
    node_elems = [[] for _ in range(mesh.n_nodes)]
    for e, conn in enumerate(mesh.elem_conn):
        for n in conn:
            node_elems[n].append(e)
    dist = {e: 0 for e in np.flatnonzero(owner == s)}
    queue = deque(dist)
    while queue:
        e = queue.popleft()
        if dist[e] == k:
            continue
        for n in mesh.elem_conn[e]:
            for f in node_elems[n]:
                if f not in dist:
                    dist[f] = dist[e] + 1
                    queue.append(f)
    return sorted({int(n) for e in dist for n in mesh.elem_conn[e]})


def brute_force_sharing(mesh, owner):
    sets = [set() for _ in range(mesh.n_nodes)]
    for e, conn in enumerate(mesh.elem_conn):
        for n in conn:
            sets[n].add(int(owner[e]))
    return [tuple(sorted(s)) for s in sets]


@pytest.mark.parametrize("n_elems, n_dofs", [
    ((160, 80, 10), 573804),
    ((320, 160, 10), 2273964),
    ((40, 20, 10), 37884),
])
def test_reference_dof_counts(n_elems, n_dofs):
    mesh = build_hex_mesh((60, 20, 1), n_elems)
    assert mesh.n_dofs == n_dofs
    assert count_dofs(n_elems) == n_dofs
    assert mesh.n_nodes == np.prod([n + 1 for n in n_elems])


def test_single_element():
    mesh = build_hex_mesh((1, 1, 1), (1, 1, 1))
    assert mesh.n_nodes == 8 and mesh.n_dofs == 32
    np.testing.assert_allclose(mesh.node_coords[mesh.elem_conn[0]], (CORNERS + 1) / 2)


@pytest.mark.parametrize("extent, n_elems", [
    ((0, 1, 1), (1, 1, 1)),
    ((1, -1, 1), (1, 1, 1)),
    ((1, 1, 1), (0, 1, 1)),
    ((1, 1, 1), (1, 1)),
    ((1, 1, 1), (1.5, 1, 1)),
])
def test_invalid_mesh(extent, n_elems):
    with pytest.raises(ValueError):
        build_hex_mesh(extent, n_elems)


def test_elements_are_boxes():
    mesh = build_hex_mesh((6, 2, 1), (3, 2, 4))
    x = mesh.node_coords[mesh.elem_conn]
    size = x.max(axis=1) - x.min(axis=1)
    np.testing.assert_allclose(size, np.broadcast_to(mesh.spacing, size.shape))
    # corners follow the documented reference ordering
    rel = (x - x.min(axis=1, keepdims=True)) / mesh.spacing
    np.testing.assert_allclose(rel, np.broadcast_to((CORNERS + 1) / 2, rel.shape))


def test_partition_local_size():
    mesh = build_hex_mesh((60, 20, 1), (40, 20, 10))
    dd = partition(mesh, (4, 4, 1))
    assert dd.n_subdomains == 16
    assert np.all(np.bincount(dd.owner) == 10 * 5 * 10)
    assert dd.local_elems == (10, 5, 10)
    assert np.array_equal(dd.owner, partition(mesh, (4, 4, 1)).owner)


def test_partition_trivial_cases():
    mesh = build_hex_mesh((2, 1, 1), (2, 1, 1))
    assert partition(mesh, (2, 1, 1)).owner.tolist() == [0, 1]
    one = classify_interface(partition(mesh, (1, 1, 1)))
    assert one.interface_nodes.size == 0 and one.components == []


def test_partition_rejects_irregular():
    mesh = build_hex_mesh((3, 1, 1), (3, 1, 1))
    with pytest.raises(ValueError, match="divide"):
        partition(mesh, (2, 1, 1))


def test_overlap_two_subdomains():
    mesh = build_hex_mesh((4, 1, 1), (4, 1, 1))
    dd = partition(mesh, (2, 1, 1))
    k0 = extend_overlap(dd, 0)
    assert [len(s) for s in k0] == [12, 12]
    assert len(set(k0[0]) & set(k0[1])) == 4
    k1 = extend_overlap(dd, 1)
    for s in range(2):
        assert sorted(k1[s].tolist()) == brute_force_overlap(mesh, dd.owner, s, 1)
    # one extra element layer of 4 nodes
    assert [len(s) for s in k1] == [16, 16]
    full = extend_overlap(dd, mesh.n_elems[0])
    assert all(sorted(s.tolist()) == list(range(mesh.n_nodes)) for s in full)


def test_overlap_negative():
    dd = partition(build_hex_mesh((1, 1, 1), (2, 2, 2)), (2, 1, 1))
    with pytest.raises(ValueError):
        extend_overlap(dd, -1)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2)),
       st.tuples(st.integers(1, 3), st.integers(1, 2), st.integers(1, 2)),
       st.integers(0, 3))
def test_overlap_matches_graph_distance(grid, local, k):
    n_elems = [g * l for g, l in zip(grid, local)]
    mesh = build_hex_mesh((1, 1, 1), n_elems)
    dd = partition(mesh, grid)
    sets_k = extend_overlap(dd, k)
    sets_k1 = extend_overlap(dd, k + 1)
    for s in range(dd.n_subdomains):
        assert sorted(sets_k[s].tolist()) == brute_force_overlap(mesh, dd.owner, s, k)
        assert set(sets_k[s]) <= set(sets_k1[s])
    assert sum(np.bincount(dd.owner, minlength=dd.n_subdomains)) == mesh.n_elements


@pytest.mark.parametrize("grid, local, m", [
    ((32, 8, 1), (5, 5, 10), 689),
    ((16, 8, 2), (10, 5, 5), 1139),
    ((2, 1, 1), (1, 1, 1), 1),
])
def test_component_counts(grid, local, m):
    n_elems = [g * l for g, l in zip(grid, local)]
    dd = classify_interface(partition(build_hex_mesh((60, 20, 1), n_elems), grid))
    assert dd.n_components == m
    assert count_components(grid) == m


def test_component_kinds_32x8x1():
    dd = classify_interface(partition(build_hex_mesh((60, 20, 1), (160, 40, 10)), (32, 8, 1)))
    kinds = [c.kind for c in dd.components]
    assert kinds.count("face") == 248 + 224
    assert kinds.count("edge") == 217
    assert kinds.count("vertex") == 0


@settings(max_examples=20, deadline=None)
@given(st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)),
       st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2)))
def test_classification_against_brute_force(grid, local):
    n_elems = [g * l for g, l in zip(grid, local)]
    mesh = build_hex_mesh((1, 1, 1), n_elems)
    dd = classify_interface(partition(mesh, grid))
    sharing = brute_force_sharing(mesh, dd.owner)
    expected_gamma = [n for n, s in enumerate(sharing) if len(s) >= 2]
    assert dd.interface_nodes.tolist() == expected_gamma
    seen = np.concatenate([c.nodes for c in dd.components]) if dd.components else np.zeros(0)
    assert sorted(seen.tolist()) == expected_gamma  # components partition the interface
    for c in dd.components:
        assert {sharing[n] for n in c.nodes} == {c.sharing_set}
        assert len(c.sharing_set) >= 2
        assert (c.kind == "face") == (len(c.sharing_set) == 2)
    mins = [int(c.nodes.min()) for c in dd.components]
    assert mins == sorted(mins)
    if min(local) >= 2:  # with one element per side some faces have no own nodes
        assert dd.n_components == count_components(grid)


def test_dirichlet_nodes_leave_interface():
    mesh = build_hex_mesh((2, 2, 1), (2, 2, 1))
    dd = partition(mesh, (2, 2, 1))
    full = classify_interface(dd).interface_nodes.copy()
    cut = classify_interface(dd, dirichlet_nodes=full[:2]).interface_nodes
    assert set(cut) == set(full[2:])


def test_restrictions():
    mesh = build_hex_mesh((1, 1, 1), (4, 4, 1))
    single = set_overlap(partition(mesh, (1, 1, 1)), 1)
    assert np.array_equal(build_restrictions(single)[0], np.arange(mesh.n_dofs))

    dd = set_overlap(partition(mesh, (4, 4, 1)), 1)
    R = build_restrictions(dd)
    for idx, nodes in zip(R, extend_overlap(dd, 1)):
        assert idx.size == 4 * len(nodes)
        x = np.random.default_rng(0).normal(size=mesh.n_dofs)
        z = np.zeros(mesh.n_dofs)
        z[idx] = x[idx]  # R^T R x
        mask = np.zeros(mesh.n_dofs, dtype=bool)
        mask[node_dofs(nodes)] = True
        assert np.array_equal(z[mask], x[mask]) and not z[~mask].any()
    shared = set(R[0]) & set(R[1])
    node = min(shared) // 4
    assert all(d in shared for d in dof(node, np.arange(4)))


def test_dofmap_split():
    mesh = build_hex_mesh((2, 2, 1), (4, 4, 2))
    dd = classify_interface(partition(mesh, (2, 2, 1)))
    cons = np.array([0, 1, 2, 3, dof(dd.interface_nodes[0], 3)])
    dm = DofMap.build(dd, cons)
    parts = [set(dm.interior), set(dm.interface), set(dm.constrained)]
    assert sum(map(len, parts)) == mesh.n_dofs
    for a, b in itertools.combinations(parts, 2):
        assert not a & b
    gamma_nodes = set(dm.interface // 4)
    assert gamma_nodes <= set(dd.interface_nodes)
    assert not (set(dm.interior // 4) & set(dd.interface_nodes))


def test_dump_format():
    dd = classify_interface(partition(build_hex_mesh((2, 1, 1), (2, 1, 1)), (2, 1, 1)))
    text = dd.dump()
    lines = text.splitlines()
    assert lines[0] == "n_nodes 12"
    assert lines[3] == "owner 0 1"
    assert lines[4] == "components 1"
    assert lines[5].split()[:4] == ["0", "face", "4", "0,1"]


def test_owner_deterministic_and_tiling():
    mesh = build_hex_mesh((6, 4, 2), (6, 4, 2))
    a, b = partition(mesh, (3, 2, 1)), partition(mesh, (3, 2, 1))
    assert np.array_equal(a.owner, b.owner)
    assert np.bincount(a.owner).sum() == mesh.n_elements
    dd = classify_interface(a)
    dm = DofMap.build(dd, np.zeros(0, int))
    assert not set(dm.interior // 4) & set(dd.interface_nodes)

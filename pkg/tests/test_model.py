import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from generators import random_dag_edges
from oracles import closes_cycle, preorder_closure
from ppco.errors import (
    CycleDetected,
    DirectRevisionDisallowed,
    DuplicateName,
    IllegalTransition,
    InvalidEnum,
    InvalidSpec,
    UnknownEntity,
    UnknownView,
)
from ppco.ids import EntityId
from ppco.model import (
    CollaborationSpace,
    Composition,
    Geometry,
    Material,
    ProductModel,
    RelationshipKind,
    Right,
    StatutoryState,
)
from ppco.store import Store, TraceKind

PISTON = EntityId("demo", 381009)
HEAD, RING, OIL_RING, PIN, CIRCLIP = (EntityId("demo", n) for n in range(381010, 381015))
GEORGES, MARC, HELENE = EntityId("demo", 18936), EntityId("demo", 18939), EntityId("demo", 18937)


def fresh() -> ProductModel:
    return ProductModel(Store())


def check_assembly_against_oracle(r: random.Random, n: int):
    model = fresh()
    nodes = [model.create_artifact(f"a{i}") for i in range(n)]
    edges: list[tuple[int, int]] = []
    for p, c in random_dag_edges(r, n, r.randint(0, 3 * n)):
        if p == c or (p, c) in edges:
            with pytest.raises(InvalidSpec):
                model.add_assembly_link(nodes[p], nodes[c])
        elif closes_cycle(edges, p, c):
            with pytest.raises(CycleDetected):
                model.add_assembly_link(nodes[p], nodes[c])
        else:
            model.add_assembly_link(nodes[p], nodes[c])
            edges.append((p, c))
    root = r.randrange(n)
    assert model.composition_closure(nodes[root]) == [nodes[i] for i in preorder_closure(edges, root)]
    expected_ancestors = {i for i in range(n) if i != root and root in preorder_closure(edges, i)}
    assert model.ancestors(nodes[root]) == {nodes[i] for i in expected_ancestors}
    return edges


@settings(max_examples=40)
@given(st.randoms(use_true_random=False))
def test_assembly_acyclicity_against_dfs(r):
    for _ in range(3):
        check_assembly_against_oracle(r, r.randint(1, 50))


# independent copy of the statutory state machine
TRANSITIONS = {
    "created": {"wait_validation"},
    "wait_validation": {"update_is_accepted", "rejected"},
    "update_is_accepted": {"wait_validation"},
    "rejected": {"wait_validation"},
}


def check_statutory_walk(r: random.Random):
    model = fresh()
    aid = model.create_artifact("x")
    state = "created"
    for _ in range(r.randint(1, 30)):
        target = r.choice(list(StatutoryState)).value
        if target in TRANSITIONS[state]:
            assert model.set_statutory(aid, target).value == state
            state = target
        else:
            with pytest.raises(IllegalTransition):
                model.set_statutory(aid, target)
        assert model.get(aid).statutory.value == state
    changes = [e.detail for e in model.store.trace(aid) if e.kind is TraceKind.STATE_CHANGED]
    for step in changes:
        old, new = step.split("->")
        assert new in TRANSITIONS[old]


@settings(max_examples=40)
@given(st.randoms(use_true_random=False))
def test_statutory_fuzz(r):
    for _ in range(5):
        check_statutory_walk(r)


def test_closure_of_piston(piston):
    assert piston.model.composition_closure(PISTON) == [PISTON, HEAD, RING, OIL_RING, PIN, CIRCLIP]
    assert piston.model.children(PISTON) == [HEAD, PIN, CIRCLIP]
    assert piston.model.ancestors(RING) == {HEAD, PISTON}


def test_composition_rules(piston):
    m = piston.model
    engine = m.create_artifact("Engine", composition="finished")
    with pytest.raises(InvalidSpec):
        m.add_assembly_link(HEAD, engine)  # finished artifacts cannot be components
    with pytest.raises(InvalidSpec):
        m.add_assembly_link(CIRCLIP, RING)  # basis artifacts have no components
    with pytest.raises(CycleDetected):
        m.add_assembly_link(RING, HEAD)


def test_revision_chain(piston):
    m = piston.model
    assert m.revise(PISTON, {"diameter_mm": "83"}) == 2
    assert m.revise(PISTON, [("diameter_mm", None)]) == 3
    assert m.get(PISTON, 1).attrs["diameter_mm"] == "82.5"
    assert m.get(PISTON, 2).attrs["diameter_mm"] == "83"
    assert "diameter_mm" not in m.get(PISTON).attrs
    assert m.store.revisions(PISTON) == [1, 2, 3]


def test_service_mode_blocks_direct_revision():
    m = ProductModel(Store(), service_mode=True)
    aid = m.create_artifact("x")
    with pytest.raises(DirectRevisionDisallowed):
        m.revise(aid, {"a": "1"})
    with m.commit_context():
        assert m.revise(aid, {"a": "1"}) == 2


def test_technical_objects(piston):
    m = piston.model
    fid = m.add_function(PISTON, "Seal", "keeps gases in")
    bid = m.add_behavior(PISTON, "Sealing", fid)
    form = m.add_form(PISTON, "Crown", Geometry("cad://crown"), Material("AlSi12", "aluminium"))
    assert m.owner(bid) == PISTON and m.owner(form) == PISTON
    assert m.get(fid).statutory is StatutoryState.CREATED
    with pytest.raises(UnknownEntity):
        m.add_behavior(HEAD, "bad", EntityId("demo", 1))
    with pytest.raises(InvalidSpec):
        m.add_behavior(HEAD, "wrong artifact", fid)
    with pytest.raises(InvalidSpec):
        m.create_artifact("  ")
    with pytest.raises(InvalidEnum):
        m.create_artifact("bad", composition="liquid")


def test_unique_names_option():
    m = ProductModel(Store(), unique_names=True)
    m.create_artifact("x")
    with pytest.raises(DuplicateName):
        m.create_artifact("x")


def test_relationship_shapes(piston):
    m = piston.model
    with pytest.raises(InvalidSpec):
        m.add_relationship(RelationshipKind.UNDIRECTED_SET, [PIN])
    with pytest.raises(InvalidSpec):
        m.add_relationship(RelationshipKind.DIRECTED_SET, [PIN, CIRCLIP], roles=[("in", [PIN]), ("out", [PIN])])
    rid = m.add_relationship(RelationshipKind.DIRECTED_SET, [PIN, CIRCLIP],
                             roles=[("holder", [PIN]), ("held", [CIRCLIP])])
    assert m.store.get(rid).kind is RelationshipKind.DIRECTED_SET


def test_manufacturing_job_view(piston):
    pairs = piston.model.resolve_job_view("Manufacturing", PISTON)
    assert {rel.kind for rel, _ in pairs} == {RelationshipKind.ASSEMBLY}
    anchors = [piston.model.owner(rel.members[0]) for rel, _ in pairs]
    closure = piston.model.composition_closure(PISTON)
    assert anchors == sorted(anchors, key=closure.index)
    assert {obj.id for _, obj in pairs} == set(closure)
    with pytest.raises(UnknownView):
        piston.model.job_view("Sales")


def test_rights_through_collaboration_space(piston):
    m = piston.model
    assert Right.PROPOSE_UPDATE in m.rights_of(GEORGES, RING)
    assert Right.PROPOSE_UPDATE not in m.rights_of(MARC, PISTON)
    loose = m.create_artifact("Loose part")
    assert m.rights_of(GEORGES, loose) == set()
    assert [s.id for s in m.spaces_containing(RING)] == [EntityId("demo", 500)]


def test_space_requires_connected_teams(piston):
    m = piston.model
    org = m.store.get(EntityId("demo", 2))
    lonely = type(org.teams[0])(name="Lonely", members=org.teams[0].members)
    m.add_organization(type(org)(EntityId("demo", 3), "Other", (lonely,)))
    with pytest.raises(InvalidSpec):
        m.add_collaboration_space(CollaborationSpace(EntityId("demo", 501), "coordinated",
                                                     ("demo:1/Piston design", "demo:3/Lonely"), (PISTON,)))


def test_created_and_state_traces(piston):
    kinds = [e.kind for e in piston.store.trace(PISTON)]
    assert kinds == [TraceKind.CREATED]
    piston.model.set_statutory(PISTON, "wait_validation", actor=GEORGES)
    last = piston.store.trace(PISTON)[-1]
    assert (last.kind, last.actor, last.detail) == (TraceKind.STATE_CHANGED, GEORGES, "created->wait_validation")


def test_composition_levels(piston):
    assert piston.model.artifact(PISTON).composition is Composition.FINISHED
    assert piston.model.artifact(CIRCLIP).composition is Composition.BASIS

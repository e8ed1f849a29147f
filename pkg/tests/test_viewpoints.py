import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from generators import batch_list, registration_ops, viewpoint_configuration
from oracles import VP08, VP09, brute_force_merge
from ppco.errors import (
    CompetenceRuleViolated,
    DuplicateViewpoint,
    InvalidLevel,
    InvalidThreshold,
    MixedProducts,
    NoConnectionConfigured,
    NoViewpointOnProduct,
    UnknownActivity,
    UnknownProduct,
    UnknownUser,
)
from ppco.ids import EntityId
from ppco.viewpoints import (
    BatchLevel,
    Connection,
    ConnectionEntry,
    ConnectionTable,
    Family,
    classification_vp,
    optimize_list_connexion_level,
)
from ppco.workspace import Workspace

PISTON = EntityId("demo", 381009)
GEORGES = EntityId("demo", 18936)


def as_pairs(connections):
    return [(c.batch, c.level) for c in connections]


def test_per_viewpoint_lists_match_worked_example(piston):
    eng = piston.engine
    assert as_pairs(eng.restitution_list_connexion_level(eng.viewpoint(9))) == VP09
    assert as_pairs(eng.restitution_list_connexion_level(eng.viewpoint(8))) == VP08


def test_georges_piston_merge(piston):
    result = piston.engine.filtering_info_artifact(PISTON, GEORGES)
    assert result.viewpoint_order == (9, 8)
    expected, order = brute_force_merge([(9, VP09), (8, VP08)])
    assert [c.batch for c in result.connections] == order
    assert {c.batch: (c.level, set(c.contributors)) for c in result.connections} == expected
    levels = result.levels()
    assert (levels["Artifact"], levels["Flows"], levels["Mechanic"]) == (1, 2, 1)
    assert len(result.connections) == 14


def test_pipeline_steps(piston):
    eng = piston.engine
    mine = eng.restitution_list_viewpoint(GEORGES)
    assert [vp.id for vp in mine] == [8, 9]
    assert [vp.id for vp in eng.filtering_list_vp_artifact(mine, PISTON)] == [8, 9]
    assert eng.filtering_list_vp_artifact(mine, EntityId("demo", 381010)) == []
    assert [vp.label for vp in classification_vp(mine)] == ["09", "08"]


def test_table_two_ordering(piston):
    vp9, vp8 = piston.engine.viewpoint(9), piston.engine.viewpoint(8)
    assert (vp9.activity, vp9.focus, vp9.competence) == ("Geometry", "Shape", 3)
    assert (vp8.activity, vp8.focus, vp8.competence) == ("Mechanic", "Mechanical", 2)
    assert vp8.relationship_ref == 9 and vp9.relationship_ref is None


def test_filter_errors(piston):
    eng = piston.engine
    with pytest.raises(UnknownUser):
        eng.filtering_info_artifact(PISTON, EntityId("demo", 1))
    with pytest.raises(UnknownProduct):
        eng.filtering_info_artifact(EntityId("demo", 999), GEORGES)
    with pytest.raises(NoViewpointOnProduct):
        eng.filtering_info_artifact(EntityId("demo", 381010), GEORGES)


def test_classification_rejects_mixed_products(piston):
    eng = piston.engine
    other = eng.register_viewpoint(GEORGES, "Product design", "Geometry", "Shape", EntityId("demo", 381010))
    with pytest.raises(MixedProducts):
        classification_vp([eng.viewpoint(9), eng.viewpoint(other)])


def test_missing_connection_entry(piston):
    eng = piston.engine
    uid = eng.register_user("Ines", "Client", {"Usage": 3})
    eng.register_viewpoint(uid, "Use", "Usage", "Comfort", PISTON)
    with pytest.raises(NoConnectionConfigured):
        eng.filtering_info_artifact(PISTON, uid)


def test_materialize_threshold(piston):
    eng = piston.engine
    result = eng.filtering_info_artifact(PISTON, GEORGES)
    top = eng.materialize(result, 1)
    assert [f.batch for f in top] == ["Artifact", "Geometry-Form", "Constraints", "Group", "Mechanic"]
    assert all(f.level == 1 for f in top)
    every = eng.materialize(result, 3)
    assert [f.batch for f in every] == [c.batch for c in result.connections]
    artifact = every[0].objects
    assert artifact[0].ref == "demo:381009" and artifact[0].name == "Piston"
    with pytest.raises(InvalidThreshold):
        eng.materialize(result, 4)
    with pytest.raises(InvalidThreshold):
        eng.materialize(result, True)


def test_materialize_assembly_and_group(piston):
    fragments = {f.batch: f for f in piston.engine.materialize(
        piston.engine.filtering_info_artifact(PISTON, GEORGES), 3)}
    names = [o.name for o in fragments["Sub-Artifact"].objects]
    assert "Piston head" in names and "Piston" not in names
    assert fragments["Group"].objects


# -- registration rules -----------------------------------------------------

def test_competence_rule():
    ws = Workspace()
    with pytest.raises(CompetenceRuleViolated):
        ws.engine.register_user("Two experts", "Designer", {"A": 3, "B": 3})
    with pytest.raises(CompetenceRuleViolated):
        ws.engine.register_user("No expert", "Designer", {"A": 2})
    with pytest.raises(InvalidLevel):
        ws.engine.register_user("Bad level", "Designer", {"A": 3, "B": 4})
    uid = ws.engine.register_user("Ok", "Engineer", {"A": 3, "B": 1})
    assert ws.engine.user(uid).expert_activity == "A"


def test_viewpoint_registration_errors(piston):
    eng = piston.engine
    with pytest.raises(UnknownActivity):
        eng.register_viewpoint(GEORGES, "x", "Thermal", "Thermal", PISTON)
    with pytest.raises(DuplicateViewpoint):
        eng.register_viewpoint(GEORGES, "x", "Geometry", "Other", PISTON)
    with pytest.raises(UnknownProduct):
        eng.register_viewpoint(GEORGES, "x", "Geometry", "Shape", EntityId("demo", 5))


def test_update_competences_rewires(piston):
    eng = piston.engine
    eng.update_competences(GEORGES, {"Geometry": 2, "Mechanic": 3})
    assert eng.viewpoint(8).competence == 3 and eng.viewpoint(8).relationship_ref is None
    assert eng.viewpoint(9).relationship_ref == 8
    assert eng.filtering_info_artifact(PISTON, GEORGES).viewpoint_order == (8, 9)
    with pytest.raises(UnknownActivity):
        eng.update_competences(GEORGES, {"Mechanic": 3})


def check_viewpoint_invariants(ws, users):
    eng = ws.engine
    for user in eng.users():
        assert [lvl for _, lvl in user.competences].count(3) == 1
    for vp in eng.viewpoints():
        experts = [v for v in eng.viewpoints()
                   if v.user_id == vp.user_id and v.product_id == vp.product_id and v.competence == 3]
        assert len(experts) <= 1
        assert vp.competence == eng.user(vp.user_id).level(vp.activity)
        if vp.competence == 3 or not experts:
            assert vp.relationship_ref is None
        else:
            assert vp.relationship_ref == experts[0].id


def run_registration_sequence(ops):
    ws = Workspace()
    products = [ws.model.create_artifact("P1"), ws.model.create_artifact("P2")]
    users = []
    for op in ops:
        if op[0] == "user":
            _, comp, _ = op
            valid = list(comp.values()).count(3) == 1
            try:
                users.append(ws.engine.register_user("u", "Designer", comp))
                assert valid
            except CompetenceRuleViolated:
                assert not valid
        elif op[0] == "recompetence" and users:
            _, comp, who = op
            uid = users[who % len(users)]
            valid = list(comp.values()).count(3) == 1
            before = ws.engine.user(uid)
            try:
                ws.engine.update_competences(uid, comp)
                assert valid
            except CompetenceRuleViolated:
                assert not valid
                assert ws.engine.user(uid) == before
            except UnknownActivity:
                assert ws.engine.user(uid) == before
        elif op[0] == "vp" and users:
            _, who, activity, p = op
            uid = users[who % len(users)]
            try:
                ws.engine.register_viewpoint(uid, "d", activity, "f", products[p])
            except UnknownActivity:
                assert ws.engine.user(uid).level(activity) is None
            except DuplicateViewpoint:
                pass
        check_viewpoint_invariants(ws, users)


@settings(max_examples=50)
@given(st.randoms(use_true_random=False))
def test_registration_sequences(r):
    for _ in range(4):
        run_registration_sequence(registration_ops(r))


# -- merge algebra -----------------------------------------------------------

def as_sets(connections):
    return {c.batch: (c.level, frozenset(c.contributors)) for c in connections}


merge = optimize_list_connexion_level


def check_algebra(r):
    x, y, z = batch_list(r), batch_list(r), batch_list(r)
    assert as_sets(merge(x, y)) == as_sets(merge(y, x))
    assert as_sets(merge(merge(x, y), z)) == as_sets(merge(x, merge(y, z)))
    assert merge(x, x) == x
    assert merge(x, ()) == x and merge((), x) == x


def check_fold(r):
    lists = [batch_list(r, vp=i + 1) for i in range(r.randint(0, 5))]
    folded = ()
    for lst in lists:
        folded = merge(folded, lst)
    expected, order = brute_force_merge([(i + 1, as_pairs(lst)) for i, lst in enumerate(lists)])
    assert [c.batch for c in folded] == order
    assert {c.batch: (c.level, set(c.contributors)) for c in folded} == expected


@settings(max_examples=50)
@given(st.randoms(use_true_random=False))
def test_merge_algebra(r):
    for _ in range(5):
        check_algebra(r)
        check_fold(r)


def test_merge_keeps_lower_level_and_unions_contributors():
    a = (Connection("x", 2, (9,)), Connection("y", 1, (9,)))
    b = (Connection("z", 3, (8,)), Connection("x", 1, (8,)))
    assert merge(a, b) == (Connection("x", 1, (9, 8)), Connection("y", 1, (9,)), Connection("z", 3, (8,)))


def check_engine_against_oracle(config):
    universe, acts, levels, lists, numbers = config
    ws = Workspace()
    product = ws.model.create_artifact("P")
    table = ConnectionTable(
        families=(Family("all", tuple(universe)),),
        entries=tuple(ConnectionEntry(a, "focus", tuple(BatchLevel(b, lvl) for b, lvl in lst))
                      for a, lst in zip(acts, lists)))
    ws.engine.set_table(table)
    uid = ws.engine.register_user("u", "Engineer", dict(zip(acts, levels)))
    for act, number in zip(acts, numbers):
        ws.engine.register_viewpoint(uid, "d", act, "focus", product, id=number)
    result = ws.engine.filtering_info_artifact(product, uid)
    ranked = sorted(zip(numbers, levels, lists), key=lambda t: (-t[1], t[0]))
    assert result.viewpoint_order == tuple(n for n, _, _ in ranked)
    expected, order = brute_force_merge([(n, lst) for n, _, lst in ranked])
    assert [c.batch for c in result.connections] == order
    assert {c.batch: (c.level, set(c.contributors)) for c in result.connections} == expected


@settings(max_examples=50)
@given(st.randoms(use_true_random=False))
def test_engine_matches_oracle_on_random_configurations(r):
    for _ in range(4):
        check_engine_against_oracle(viewpoint_configuration(r))

"""Loading scenario and viewpoint-configuration JSON documents.

A scenario document carries the product, organization and user data of one
case (``artifacts``, ``relationships``, ``organizations``,
``activity_domain_links``, ``job_views`` plus the optional ``functions``,
``forms``, ``behaviors``, ``flows``, ``requirements``, ``constraints``,
``users``, ``collaboration_spaces``, ``processes`` and ``viewpoints``). A
viewpoint configuration document (``viewpoints.json``) has ``families``,
``connections`` and ``selectors``.

Loading is idempotent: entities already present with identical content are
skipped, conflicting content is a :class:`FixtureError`.
"""

from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path

from ppco.errors import FixtureError, PpcoError
from ppco.ids import EntityId
from ppco.model import (
    Abstraction,
    Activity,
    Artifact,
    Behavior,
    CollaborationLevel,
    CollaborationSpace,
    Composition,
    Constraint,
    ConstraintTarget,
    Effectivity,
    Flow,
    Form,
    Function,
    Geometry,
    Material,
    Organization,
    Process,
    ProcessKind,
    Profile,
    Relationship,
    RelationshipKind,
    Requirement,
    RequirementTarget,
    Resource,
    ResourceKind,
    Right,
    Role,
    Team,
    TeamMember,
    as_attributes,
    as_enum,
)
from ppco.serial import parse_time
from ppco.viewpoints import (
    BatchLevel,
    BatchSelector,
    ConnectionEntry,
    ConnectionTable,
    Family,
    Situation,
    User,
)

eid = EntityId.parse


def _opt_id(value):
    return eid(value) if value is not None else None


def _time(value) -> datetime:
    return parse_time(value)


def _constraint(raw, default_target=ConstraintTarget.LINK) -> Constraint:
    return Constraint(id=eid(raw["id"]), expression=raw["expression"],
                      target=as_enum(ConstraintTarget, raw.get("target", default_target)),
                      violated=bool(raw.get("violated", False)), subject=_opt_id(raw.get("subject")))


def _artifact(raw) -> Artifact:
    eff = raw.get("effectivity")
    return Artifact(id=eid(raw["id"]), name=raw["name"],
                    abstraction=as_enum(Abstraction, raw.get("abstraction", "physical")),
                    composition=as_enum(Composition, raw.get("composition", "semi_finished")),
                    effectivity=Effectivity(_time(eff["start"]), _time(eff["end"])) if eff else None,
                    attributes=as_attributes(raw.get("attributes", {})))


def _function(raw) -> Function:
    return Function(id=eid(raw["id"]), name=raw["name"], artifact=eid(raw["artifact"]),
                    description=raw.get("description", ""), parent_function=_opt_id(raw.get("parent_function")),
                    attributes=as_attributes(raw.get("attributes", {})))


def _form(raw) -> Form:
    geo, mat = raw["geometry"], raw["material"]
    dims = geo.get("bounding_dims")
    return Form(id=eid(raw["id"]), name=raw["name"], artifact=eid(raw["artifact"]),
                artifact_revision=raw.get("artifact_revision", 1),
                geometry=Geometry(geo["shape_descriptor"], tuple(float(d) for d in dims) if dims else None),
                material=Material(mat["name"], mat.get("grade")),
                attributes=as_attributes(raw.get("attributes", {})))


def _behavior(raw) -> Behavior:
    return Behavior(id=eid(raw["id"]), name=raw["name"], artifact=eid(raw["artifact"]),
                    implements_function=eid(raw["implements_function"]),
                    causal_model=raw.get("causal_model", ""), attributes=as_attributes(raw.get("attributes", {})))


def _flow(raw) -> Flow:
    return Flow(id=eid(raw["id"]), name=raw["name"], artifact=eid(raw["artifact"]),
                attributes=as_attributes(raw.get("attributes", {})))


def _relationship(raw) -> Relationship:
    roles = raw.get("roles", {})
    return Relationship(id=eid(raw["id"]), kind=as_enum(RelationshipKind, raw["kind"]),
                        members=tuple(eid(m) for m in raw["members"]),
                        roles=tuple((name, tuple(eid(m) for m in ids)) for name, ids in roles.items()),
                        constraints=tuple(_constraint(c) for c in raw.get("constraints", ())))


def _requirement(raw) -> Requirement:
    return Requirement(id=eid(raw["id"]), applies_to=as_enum(RequirementTarget, raw["applies_to"]),
                       target=eid(raw["target"]), text=raw["text"])


def _user(raw) -> User:
    return User(id=eid(raw["id"]), name=raw["name"], situation=as_enum(Situation, raw["situation"]),
                competences=tuple((a, lvl) for a, lvl in raw["competences"].items()))


def _organization(raw) -> Organization:
    teams = []
    for t in raw.get("teams", ()):
        members = tuple(
            TeamMember(eid(m["user"]), Role(m["role"]["name"],
                                            frozenset(as_enum(Right, r) for r in m["role"]["rights"])))
            for m in t.get("members", ()))
        teams.append(Team(t["name"], t.get("objective", ""), tuple(t.get("connectors", ())), members))
    return Organization(id=eid(raw["id"]), name=raw["name"], teams=tuple(teams))


def _space(raw) -> CollaborationSpace:
    return CollaborationSpace(id=eid(raw["id"]), level=as_enum(CollaborationLevel, raw["level"]),
                              teams=tuple(raw["teams"]), products=tuple(eid(p) for p in raw["products"]))


def _process(raw) -> Process:
    acts = []
    for a in raw["activities"]:
        acts.append(Activity(
            id=eid(a["id"]), name=a["name"], objective=a.get("objective", ""),
            pre_conditions=tuple(_constraint(c, ConstraintTarget.DOMAIN) for c in a.get("pre_conditions", ())),
            post_conditions=tuple(_constraint(c, ConstraintTarget.DOMAIN) for c in a.get("post_conditions", ())),
            resources=tuple(Resource(as_enum(ResourceKind, r["kind"]), str(r["ref"])) for r in a.get("resources", ())),
            inputs=tuple(eid(i) for i in a.get("inputs", ())),
            outputs=tuple(eid(o) for o in a.get("outputs", ())),
        ))
    return Process(id=eid(raw["id"]), kind=as_enum(ProcessKind, raw["kind"]), activities=tuple(acts))


# (document key, parser) in dependency order
_SCENARIO_KINDS = (
    ("artifacts", _artifact),
    ("functions", _function),
    ("forms", _form),
    ("behaviors", _behavior),
    ("flows", _flow),
    ("relationships", _relationship),
    ("requirements", _requirement),
    ("constraints", lambda raw: _constraint(raw, ConstraintTarget.DOMAIN)),
    ("users", _user),
    ("organizations", _organization),
    ("collaboration_spaces", _space),
    ("processes", _process),
)


def parse_connection_table(doc: dict) -> ConnectionTable:
    families = tuple(Family(f["name"], tuple(f["batches"])) for f in doc["families"])
    entries = tuple(
        ConnectionEntry(c["activity"], c["focus"], tuple(BatchLevel(name, level) for name, level in c["batches"]))
        for c in doc["connections"])
    selectors = tuple(
        (batch, BatchSelector(source=s["source"], scope=s.get("scope", "root"), kinds=tuple(s.get("kinds", ())),
                              prefix=s.get("prefix"), view=s.get("view")))
        for batch, s in doc.get("selectors", {}).items())
    return ConnectionTable(families, entries, selectors)


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise FixtureError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FixtureError(f"{path}: top level must be a JSON object")
    return doc


def load_fixture(ws, path) -> dict[str, int]:
    """Load a scenario or viewpoint-configuration file into workspace ``ws``.

    Returns the number of entries per document key.
    """
    path = Path(path)
    doc = read_json(path)
    where = str(path)
    with ws.store.mutex:
        if "connections" in doc:
            try:
                table = parse_connection_table(doc)
                ws.engine.set_table(table)
            except (KeyError, TypeError, ValueError, PpcoError) as exc:
                raise FixtureError(f"{where}: {exc}") from exc
            return {"families": len(table.families), "connections": len(table.entries),
                    "selectors": len(table.selectors)}
        return _load_scenario(ws, doc, where)


def _load_scenario(ws, doc, where) -> dict[str, int]:
    store, model, engine = ws.store, ws.model, ws.engine
    counts: dict[str, int] = {}

    def fail(key, i, exc):
        raise FixtureError(f"{where}: {key}[{i}]: {type(exc).__name__}: {exc}") from exc

    for key, parse in _SCENARIO_KINDS:
        items = doc.get(key, ())
        counts[key] = len(items)
        for i, raw in enumerate(items):
            try:
                obj = parse(raw)
                if obj.id in store:
                    if store.get(obj.id, 1) != obj:
                        raise FixtureError(f"{obj.id} already exists with different content")
                    continue
                if isinstance(obj, User):
                    engine.add_user(obj)
                else:
                    model.add(obj)
            except FixtureError:
                raise
            except (KeyError, TypeError, ValueError, PpcoError) as exc:
                fail(key, i, exc)

    links = doc.get("activity_domain_links", ())
    counts["activity_domain_links"] = len(links)
    existing = {(l.profile, l.activity, l.domain) for l in store.latest("activity_domain_link")}
    for i, raw in enumerate(links):
        try:
            row = (as_enum(Profile, raw["profile"]), raw["activity"], raw["domain"])
            if row not in existing:
                model.add_activity_domain_link(*row, id=raw.get("id"))
                existing.add(row)
        except (KeyError, TypeError, ValueError, PpcoError) as exc:
            fail("activity_domain_links", i, exc)

    views = doc.get("job_views", ())
    counts["job_views"] = len(views)
    for i, raw in enumerate(views):
        try:
            kinds = tuple(as_enum(RelationshipKind, k) for k in raw["relationship_kinds"])
            preds = as_attributes(raw.get("attribute_predicates", {}))
            current = next((v for v in store.latest("job_view") if v.name == raw["name"]), None)
            if current is not None:
                if (current.relationship_kinds, current.attribute_predicates) != (kinds, preds):
                    raise FixtureError(f"job view {raw['name']!r} already exists with a different selector")
                continue
            model.register_job_view(raw["name"], kinds, preds, id=raw.get("id"))
        except FixtureError:
            raise
        except (KeyError, TypeError, ValueError, PpcoError) as exc:
            fail("job_views", i, exc)

    vps = doc.get("viewpoints", ())
    counts["viewpoints"] = len(vps)
    activities = model.known_activities()
    for i, raw in enumerate(vps):
        try:
            number = raw["id"]
            user, product = eid(raw["user"]), eid(raw["product"])
            wanted = (user, raw["domain"], raw["activity"], raw["focus"], product)
            if activities and raw["activity"] not in activities:
                raise FixtureError(f"viewpoint {number}: activity {raw['activity']!r} "
                                   "appears in no activity/domain link")
            key = EntityId("vp", number)
            if key in store:
                vp = store.get(key)
                if (vp.user_id, vp.domain_name, vp.activity, vp.focus, vp.product_id) != wanted:
                    raise FixtureError(f"viewpoint {number} already exists with different content")
                continue
            engine.register_viewpoint(user, raw["domain"], raw["activity"], raw["focus"], product, id=number)
        except FixtureError:
            raise
        except (KeyError, TypeError, ValueError, PpcoError) as exc:
            fail("viewpoints", i, exc)
    return counts


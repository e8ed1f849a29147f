"""Product / process / collaboration / organization information model.

Entities are frozen dataclasses persisted through :class:`ppco.store.Store`.
:class:`ProductModel` is the only sanctioned writer: it enforces assembly
acyclicity, gapless revision chains and the statutory state machine.
"""

from __future__ import annotations

import contextlib
import dataclasses
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import datetime
from enum import Enum

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
from ppco.store import Store, TraceKind, stored

Attributes = tuple[tuple[str, str], ...]


class StatutoryState(str, Enum):
    CREATED = "created"
    WAIT_VALIDATION = "wait_validation"
    UPDATE_IS_ACCEPTED = "update_is_accepted"
    REJECTED = "rejected"


LEGAL_TRANSITIONS: frozenset[tuple[StatutoryState, StatutoryState]] = frozenset({
    (StatutoryState.CREATED, StatutoryState.WAIT_VALIDATION),
    (StatutoryState.WAIT_VALIDATION, StatutoryState.UPDATE_IS_ACCEPTED),
    (StatutoryState.WAIT_VALIDATION, StatutoryState.REJECTED),
    (StatutoryState.UPDATE_IS_ACCEPTED, StatutoryState.WAIT_VALIDATION),
    (StatutoryState.REJECTED, StatutoryState.WAIT_VALIDATION),
})


class ObjectKind(str, Enum):
    ARTIFACT = "artifact"
    FUNCTION = "function"
    FORM = "form"
    BEHAVIOR = "behavior"
    FLOW = "flow"


class Abstraction(str, Enum):
    PHYSICAL = "physical"
    PRODUCT_TYPE = "product_type"
    GENERIC = "generic"


class Composition(str, Enum):
    BASIS = "basis"
    SEMI_FINISHED = "semi_finished"
    FINISHED = "finished"


class RelationshipKind(str, Enum):
    ASSEMBLY = "assembly"
    UNDIRECTED_SET = "undirected_set"
    DIRECTED_SET = "directed_set"
    REFERENCE = "reference"
    CONSTRAINT_LINK = "constraint_link"


class ConstraintTarget(str, Enum):
    LINK = "link"
    DOMAIN = "domain"


class RequirementTarget(str, Enum):
    FUNCTION = "function"
    FORM = "form"


class ProcessKind(str, Enum):
    BUSINESS = "business"
    INFORMATIONAL_ORGANIZATIONAL = "informational_organizational"


class ResourceKind(str, Enum):
    ACTOR = "actor"
    TOOL = "tool"
    MACHINE = "machine"
    OTHER = "other"


class Right(str, Enum):
    READ = "read"
    PROPOSE_UPDATE = "propose_update"
    APPROVE = "approve"


class CollaborationLevel(str, Enum):
    COMMUNICATIVE = "communicative"
    COLLECTIVE = "collective"
    COOPERATIVE = "cooperative"
    COORDINATED = "coordinated"
    CONCERTED = "concerted"


class Profile(str, Enum):
    DESIGN = "Design"
    MANUFACTURING = "Manufacturing"
    SUPPLYING = "Supplying"
    DISTRIBUTION = "Distribution"
    MAINTENANCE = "Maintenance"
    CLIENT = "Client"
    PARTNERING = "Partnering"


def as_enum(enum_cls, value):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise InvalidEnum(f"{value!r} is not a valid {enum_cls.__name__} (expected one of {allowed})") from None


def as_attributes(value) -> Attributes:
    items = value.items() if isinstance(value, Mapping) else value
    out = tuple((str(k), str(v)) for k, v in items)
    if len({k for k, _ in out}) != len(out):
        raise InvalidSpec("duplicate attribute keys")
    return out


# -- product --------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Effectivity:
    start: datetime
    end: datetime

    def __post_init__(self):
        if self.end < self.start:
            raise InvalidSpec("effectivity ends before it starts")

    def contains(self, when: datetime) -> bool:
        return self.start <= when <= self.end


@dataclass(frozen=True, slots=True, kw_only=True)
class TechnicalObject:
    id: EntityId
    kind: ObjectKind
    name: str
    statutory: StatutoryState = StatutoryState.CREATED
    revision: int = 1
    effectivity: Effectivity | None = None
    attributes: Attributes = ()

    @property
    def attrs(self) -> dict[str, str]:
        return dict(self.attributes)


@stored("artifact")
@dataclass(frozen=True, slots=True, kw_only=True)
class Artifact(TechnicalObject):
    kind: ObjectKind = ObjectKind.ARTIFACT
    abstraction: Abstraction = Abstraction.PHYSICAL
    composition: Composition = Composition.SEMI_FINISHED


@stored("function")
@dataclass(frozen=True, slots=True, kw_only=True)
class Function(TechnicalObject):
    kind: ObjectKind = ObjectKind.FUNCTION
    artifact: EntityId
    description: str = ""
    parent_function: EntityId | None = None


@dataclass(frozen=True, slots=True)
class Geometry:
    shape_descriptor: str
    bounding_dims: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.bounding_dims is not None and (
            len(self.bounding_dims) != 3 or any(d <= 0 for d in self.bounding_dims)
        ):
            raise InvalidSpec("bounding dimensions must be three positive lengths")


@dataclass(frozen=True, slots=True)
class Material:
    name: str
    grade: str | None = None

    def __post_init__(self):
        if not self.name:
            raise InvalidSpec("material name must be non-empty")


@stored("form")
@dataclass(frozen=True, slots=True, kw_only=True)
class Form(TechnicalObject):
    kind: ObjectKind = ObjectKind.FORM
    artifact: EntityId
    artifact_revision: int = 1
    geometry: Geometry
    material: Material


@stored("behavior")
@dataclass(frozen=True, slots=True, kw_only=True)
class Behavior(TechnicalObject):
    kind: ObjectKind = ObjectKind.BEHAVIOR
    artifact: EntityId
    implements_function: EntityId
    causal_model: str = ""


@stored("flow")
@dataclass(frozen=True, slots=True, kw_only=True)
class Flow(TechnicalObject):
    kind: ObjectKind = ObjectKind.FLOW
    artifact: EntityId


@stored("constraint")
@dataclass(frozen=True, slots=True)
class Constraint:
    id: EntityId
    expression: str
    target: ConstraintTarget = ConstraintTarget.LINK
    violated: bool = False
    # artifact a domain constraint applies to; link constraints live on their relationship
    subject: EntityId | None = None

    def __post_init__(self):
        if not self.expression:
            raise InvalidSpec("constraint expression must be non-empty")


@stored("relationship")
@dataclass(frozen=True, slots=True)
class Relationship:
    id: EntityId
    kind: RelationshipKind
    members: tuple[EntityId, ...]
    # directed_set only: exactly two (role, members) subsets
    roles: tuple[tuple[str, tuple[EntityId, ...]], ...] = ()
    constraints: tuple[Constraint, ...] = ()


@stored("requirement")
@dataclass(frozen=True, slots=True)
class Requirement:
    id: EntityId
    applies_to: RequirementTarget
    target: EntityId
    text: str


@stored("job_view")
@dataclass(frozen=True, slots=True)
class JobView:
    id: EntityId
    name: str
    relationship_kinds: tuple[RelationshipKind, ...]
    # matched against attributes of each member object
    attribute_predicates: Attributes = ()


# -- process ----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Resource:
    kind: ResourceKind
    ref: str


@dataclass(frozen=True, slots=True)
class Activity:
    id: EntityId
    name: str
    objective: str = ""
    pre_conditions: tuple[Constraint, ...] = ()
    post_conditions: tuple[Constraint, ...] = ()
    resources: tuple[Resource, ...] = ()
    inputs: tuple[EntityId, ...] = ()
    outputs: tuple[EntityId, ...] = ()


@stored("process")
@dataclass(frozen=True, slots=True)
class Process:
    id: EntityId
    kind: ProcessKind
    activities: tuple[Activity, ...]


# -- organization -----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Role:
    name: str
    rights: frozenset[Right]

    def __post_init__(self):
        if not self.rights:
            raise InvalidSpec(f"role {self.name!r} has no rights")


@dataclass(frozen=True, slots=True)
class TeamMember:
    user: EntityId
    role: Role


@dataclass(frozen=True, slots=True)
class Team:
    name: str
    objective: str = ""
    # references of the form "<org id>/<team name>"
    connectors: tuple[str, ...] = ()
    members: tuple[TeamMember, ...] = ()


@stored("organization")
@dataclass(frozen=True, slots=True)
class Organization:
    id: EntityId
    name: str
    teams: tuple[Team, ...] = ()

    def team(self, name: str) -> Team:
        for t in self.teams:
            if t.name == name:
                return t
        raise UnknownEntity(f"organization {self.id} has no team {name!r}")


def team_ref(org: EntityId, team: str) -> str:
    return f"{org}/{team}"


def parse_team_ref(ref: str) -> tuple[EntityId, str]:
    org, sep, name = ref.partition("/")
    if not sep or not name:
        raise InvalidSpec(f"malformed team reference {ref!r}, expected '<org>/<team>'")
    return EntityId.parse(org), name


@stored("collaboration_space")
@dataclass(frozen=True, slots=True)
class CollaborationSpace:
    id: EntityId
    level: CollaborationLevel
    teams: tuple[str, ...]
    products: tuple[EntityId, ...]


@stored("activity_domain_link")
@dataclass(frozen=True, slots=True)
class ActivityDomainLink:
    id: EntityId
    profile: Profile
    activity: str
    domain: str


_TECHNICAL_KINDS = ("artifact", "function", "form", "behavior", "flow")
_SET_KINDS = {RelationshipKind.UNDIRECTED_SET, RelationshipKind.DIRECTED_SET, RelationshipKind.CONSTRAINT_LINK}


class ProductModel:
    """Validated read/write access to the product, process and organization
    entities of one store.

    In ``service_mode`` :meth:`revise` may only run inside
    :meth:`commit_context`, which the approval workflow opens when an update
    is committed.
    """

    def __init__(self, store: Store, *, namespace: str = "demo", unique_names: bool = False,
                 service_mode: bool = False):
        self.store = store
        self.namespace = namespace
        self.unique_names = unique_names
        self.service_mode = service_mode
        self._committing = 0
        self._children: dict[EntityId, list[EntityId]] = {}
        self._parents: dict[EntityId, list[EntityId]] = {}
        self._links: dict[tuple[EntityId, EntityId], EntityId] = {}
        for rel in store.latest("relationship"):
            if rel.kind is RelationshipKind.ASSEMBLY:
                self._index_link(rel)

    # -- reads --------------------------------------------------------------

    def _mint(self, id):
        return EntityId.parse(id) if id is not None else self.store.mint(self.namespace)

    def get(self, id: EntityId, revision: int | None = None):
        """Latest revision with its live statutory state, or the committed
        record of ``revision``."""
        obj = self.store.get(id, revision)
        if revision is None and isinstance(obj, TechnicalObject):
            live = self.store.get_meta(id).get("statutory")
            if live is not None and live != obj.statutory.value:
                obj = dataclasses.replace(obj, statutory=StatutoryState(live))
        return obj

    def artifact(self, id: EntityId, revision: int | None = None) -> Artifact:
        if id not in self.store or self.store.kind_of(id) != "artifact":
            raise UnknownEntity(f"{id} is not a known artifact")
        return self.get(id, revision)

    def is_artifact(self, id: EntityId) -> bool:
        return id in self.store and self.store.kind_of(id) == "artifact"

    def technical_object(self, id: EntityId) -> TechnicalObject:
        if id not in self.store or self.store.kind_of(id) not in _TECHNICAL_KINDS:
            raise UnknownEntity(f"{id} is not a known technical object")
        return self.get(id)

    def owner(self, id: EntityId) -> EntityId:
        """Artifact an object belongs to (an artifact owns itself)."""
        obj = self.technical_object(id)
        return obj.id if isinstance(obj, Artifact) else obj.artifact

    def owned(self, artifact: EntityId, kind: str) -> list:
        return [o for o in self.store.latest(kind) if o.artifact == artifact]

    def children(self, id: EntityId) -> list[EntityId]:
        return list(self._children.get(id, ()))

    def parents(self, id: EntityId) -> list[EntityId]:
        return list(self._parents.get(id, ()))

    def ancestors(self, id: EntityId) -> set[EntityId]:
        seen: set[EntityId] = set()
        stack = list(self._parents.get(id, ()))
        while stack:
            node = stack.pop()
            if node not in seen:
                seen.add(node)
                stack.extend(self._parents.get(node, ()))
        return seen

    def composition_closure(self, root: EntityId) -> list[EntityId]:
        """Depth-first preorder of ``root`` and all transitive assembly
        children, children in insertion order, each id once."""
        self.artifact(root)
        order: list[EntityId] = []
        seen: set[EntityId] = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            order.append(node)
            stack.extend(reversed(self._children.get(node, ())))
        return order

    def _reachable(self, src: EntityId, dst: EntityId) -> bool:
        stack, seen = [src], set()
        while stack:
            node = stack.pop()
            if node == dst:
                return True
            if node not in seen:
                seen.add(node)
                stack.extend(self._children.get(node, ()))
        return False

    # -- product writes -----------------------------------------------------

    def create_artifact(self, name: str, abstraction=Abstraction.PHYSICAL,
                        composition=Composition.SEMI_FINISHED, *, attributes=(),
                        effectivity: Effectivity | None = None, id=None) -> EntityId:
        if not isinstance(name, str) or not name.strip():
            raise InvalidSpec("artifact name must be non-empty")
        art = Artifact(
            id=self._mint(id),
            name=name,
            abstraction=as_enum(Abstraction, abstraction),
            composition=as_enum(Composition, composition),
            effectivity=effectivity,
            attributes=as_attributes(attributes),
        )
        return self.add(art)

    def add_function(self, artifact, name, description="", parent_function=None, *, id=None) -> EntityId:
        return self.add(Function(id=self._mint(id), name=name, artifact=EntityId.parse(artifact),
                                 description=description,
                                 parent_function=EntityId.parse(parent_function) if parent_function else None))

    def add_form(self, artifact, name, geometry: Geometry, material: Material, *, id=None) -> EntityId:
        artifact = EntityId.parse(artifact)
        rev = self.artifact(artifact).revision
        return self.add(Form(id=self._mint(id), name=name, artifact=artifact, artifact_revision=rev,
                             geometry=geometry, material=material))

    def add_behavior(self, artifact, name, implements_function, causal_model="", *, id=None) -> EntityId:
        return self.add(Behavior(id=self._mint(id), name=name, artifact=EntityId.parse(artifact),
                                 implements_function=EntityId.parse(implements_function),
                                 causal_model=causal_model))

    def add_flow(self, artifact, name, *, id=None) -> EntityId:
        return self.add(Flow(id=self._mint(id), name=name, artifact=EntityId.parse(artifact)))

    def add_requirement(self, applies_to, target, text, *, id=None) -> EntityId:
        return self.add(Requirement(id=self._mint(id), applies_to=as_enum(RequirementTarget, applies_to),
                                    target=EntityId.parse(target), text=text))

    def add_constraint(self, expression, subject=None, *, target=ConstraintTarget.DOMAIN, id=None) -> EntityId:
        return self.add(Constraint(id=self._mint(id), expression=expression,
                                   target=as_enum(ConstraintTarget, target),
                                   subject=EntityId.parse(subject) if subject else None))

    def new_constraint(self, expression, *, target=ConstraintTarget.LINK, id=None) -> Constraint:
        """Build an embedded constraint (for relationships and activities)."""
        return Constraint(id=self._mint(id), expression=expression, target=as_enum(ConstraintTarget, target))

    def add_relationship(self, kind, members: Sequence, *, roles=(), constraints=(), id=None) -> EntityId:
        rel = Relationship(
            id=self._mint(id),
            kind=as_enum(RelationshipKind, kind),
            members=tuple(EntityId.parse(m) for m in members),
            roles=tuple((name, tuple(EntityId.parse(m) for m in ids)) for name, ids in roles),
            constraints=tuple(constraints),
        )
        return self.add(rel)

    def add_assembly_link(self, parent, child, constraints: Iterable[Constraint] = (), *, id=None) -> EntityId:
        return self.add_relationship(RelationshipKind.ASSEMBLY, [parent, child], constraints=constraints, id=id)

    def register_job_view(self, name, relationship_kinds, attribute_predicates=(), *, id=None) -> EntityId:
        return self.add(JobView(id=self._mint(id), name=name,
                                relationship_kinds=tuple(as_enum(RelationshipKind, k) for k in relationship_kinds),
                                attribute_predicates=as_attributes(attribute_predicates)))

    def add(self, entity) -> EntityId:
        """Validate and store a freshly built entity (first revision)."""
        with self.store.mutex:
            if entity.id in self.store:
                raise InvalidSpec(f"id {entity.id} is already in use")
            validator = getattr(self, f"_check_{type(entity).__name__.lower()}", None)
            if validator is not None:
                validator(entity)
            self.store.put(entity)
            if isinstance(entity, Relationship) and entity.kind is RelationshipKind.ASSEMBLY:
                self._index_link(entity)
            if isinstance(entity, TechnicalObject):
                self.store.set_meta(entity.id, statutory=entity.statutory.value)
                self.store.append_trace(entity.id, TraceKind.CREATED, payload=entity.name,
                                        detail=f"{entity.kind.value} revision 1")
            return entity.id

    def _index_link(self, rel: Relationship):
        parent, child = rel.members
        self._children.setdefault(parent, []).append(child)
        self._parents.setdefault(child, []).append(parent)
        self._links[(parent, child)] = rel.id

    def _check_technical(self, obj: TechnicalObject, kind: ObjectKind):
        if obj.kind is not kind:
            raise InvalidSpec(f"{type(obj).__name__} must have kind {kind.value}")
        if not obj.name or not obj.name.strip():
            raise InvalidSpec(f"{kind.value} name must be non-empty")
        if obj.revision != 1:
            raise InvalidSpec("new objects start at revision 1")
        if obj.statutory is not StatutoryState.CREATED:
            raise InvalidSpec("new objects start in the created state")
        if isinstance(obj, (Function, Form, Behavior, Flow)):
            self.artifact(obj.artifact)

    def _check_artifact(self, art: Artifact):
        self._check_technical(art, ObjectKind.ARTIFACT)
        if self.unique_names and any(a.name == art.name for a in self.store.latest("artifact")):
            raise DuplicateName(f"an artifact named {art.name!r} already exists")

    def _check_function(self, fn: Function):
        self._check_technical(fn, ObjectKind.FUNCTION)
        parent = fn.parent_function
        while parent is not None:  # walk up: acyclic by construction, but parents must resolve
            if parent not in self.store or self.store.kind_of(parent) != "function":
                raise UnknownEntity(f"unknown parent function {parent}")
            parent = self.store.get(parent).parent_function

    def _check_form(self, form: Form):
        self._check_technical(form, ObjectKind.FORM)
        self.artifact(form.artifact, form.artifact_revision)

    def _check_behavior(self, beh: Behavior):
        self._check_technical(beh, ObjectKind.BEHAVIOR)
        fn = beh.implements_function
        if fn not in self.store or self.store.kind_of(fn) != "function":
            raise UnknownEntity(f"behavior implements unknown function {fn}")
        if self.store.get(fn).artifact != beh.artifact:
            raise InvalidSpec("behavior must implement a function of the same artifact")

    def _check_flow(self, flow: Flow):
        self._check_technical(flow, ObjectKind.FLOW)

    def _check_requirement(self, req: Requirement):
        obj = self.technical_object(req.target)
        if obj.kind.value != req.applies_to.value:
            raise InvalidSpec(f"requirement applies to a {req.applies_to.value} but {req.target} is a {obj.kind.value}")

    def _check_constraint(self, con: Constraint):
        if con.subject is not None:
            self.technical_object(con.subject)

    def _check_relationship(self, rel: Relationship):
        for m in rel.members:
            self.technical_object(m)
        n = len(rel.members)
        if len(set(rel.members)) != n:
            raise InvalidSpec("relationship members must be distinct")
        if rel.kind in (RelationshipKind.ASSEMBLY, RelationshipKind.REFERENCE) and n != 2:
            raise InvalidSpec(f"{rel.kind.value} relationships link exactly two members")
        if rel.kind in _SET_KINDS and n < 2:
            raise InvalidSpec(f"{rel.kind.value} relationships need at least two members")
        if rel.kind is RelationshipKind.DIRECTED_SET:
            if len(rel.roles) != 2 or rel.roles[0][0] == rel.roles[1][0]:
                raise InvalidSpec("directed sets partition members into two distinctly named roles")
            a, b = (set(ids) for _, ids in rel.roles)
            if a & b or (a | b) != set(rel.members) or not a or not b:
                raise InvalidSpec("directed set roles must be disjoint, non-empty and cover all members")
        elif rel.roles:
            raise InvalidSpec("only directed sets carry roles")
        if rel.kind is RelationshipKind.ASSEMBLY:
            parent, child = (self.artifact(m) for m in rel.members)
            if (parent.id, child.id) in self._links:
                raise InvalidSpec(f"assembly link {parent.id} -> {child.id} already exists")
            if self._reachable(child.id, parent.id):
                raise CycleDetected(f"linking {parent.id} -> {child.id} would close a cycle")
            if child.composition is Composition.FINISHED:
                raise InvalidSpec(f"finished artifact {child.id} cannot be an assembly component")
            if parent.composition is Composition.BASIS:
                raise InvalidSpec(f"basis artifact {parent.id} cannot have components")

    def _check_jobview(self, view: JobView):
        if not view.name:
            raise InvalidSpec("job view name must be non-empty")
        if any(v.name == view.name for v in self.store.latest("job_view")):
            raise DuplicateName(f"job view {view.name!r} already registered")

    # -- job views ----------------------------------------------------------

    def job_view(self, name: str) -> JobView:
        for view in self.store.latest("job_view"):
            if view.name == name:
                return view
        raise UnknownView(f"no job view named {name!r}")

    def resolve_job_view(self, view: JobView | str, root: EntityId) -> list[tuple[Relationship, TechnicalObject]]:
        """(relationship, member) pairs for every relationship anchored in the
        composition closure of ``root`` that matches the view's selector."""
        if isinstance(view, str):
            view = self.job_view(view)
        closure = self.composition_closure(root)
        position = {a: i for i, a in enumerate(closure)}
        wanted = set(view.relationship_kinds)
        picked = []
        for rel in self.store.latest("relationship"):
            if rel.kind not in wanted:
                continue
            anchor = self.owner(rel.members[0])
            if anchor in position:
                picked.append((position[anchor], rel.id, rel))
        picked.sort(key=lambda t: (t[0], t[1]))
        out = []
        for _, _, rel in picked:
            for m in rel.members:
                obj = self.get(m)
                attrs = obj.attrs
                if all(attrs.get(k) == v for k, v in view.attribute_predicates):
                    out.append((rel, obj))
        return out

    # -- evolution ----------------------------------------------------------

    @contextlib.contextmanager
    def commit_context(self):
        self._committing += 1
        try:
            yield
        finally:
            self._committing -= 1

    def revise(self, id: EntityId, changes: Mapping[str, str | None] | Sequence = ()) -> int:
        """Write revision n+1 of a technical object with ``changes`` applied to
        its attributes (a ``None`` value removes the key)."""
        if self.service_mode and not self._committing:
            raise DirectRevisionDisallowed("revisions go through an approved update in service mode")
        with self.store.mutex:
            current = self.technical_object(id)
            attrs = dict(current.attributes)
            items = changes.items() if isinstance(changes, Mapping) else changes
            for key, value in items:
                if value is None:
                    attrs.pop(key, None)
                else:
                    attrs[str(key)] = str(value)
            revised = dataclasses.replace(current, revision=current.revision + 1,
                                          attributes=tuple(attrs.items()))
            return self.store.put(revised)

    def set_statutory(self, id: EntityId, new, *, actor: EntityId | None = None) -> StatutoryState:
        new = as_enum(StatutoryState, new)
        with self.store.mutex:
            old = self.technical_object(id).statutory
            if (old, new) not in LEGAL_TRANSITIONS:
                raise IllegalTransition(f"{id}: {old.value} -> {new.value} is not allowed")
            self.store.set_meta(id, statutory=new.value)
            self.store.append_trace(id, TraceKind.STATE_CHANGED, actor=actor,
                                    payload={"from": old.value, "to": new.value},
                                    detail=f"{old.value}->{new.value}")
            return old

    # -- organization / process ---------------------------------------------

    def add_organization(self, org: Organization) -> EntityId:
        return self.add(org)

    def _check_organization(self, org: Organization):
        if not org.name:
            raise InvalidSpec("organization name must be non-empty")
        names = [t.name for t in org.teams]
        if len(set(names)) != len(names):
            raise InvalidSpec(f"team names must be unique within {org.id}")
        for team in org.teams:
            if not team.members:
                raise InvalidSpec(f"team {team.name!r} has no members")
            for member in team.members:
                if member.user not in self.store or self.store.kind_of(member.user) != "user":
                    raise UnknownEntity(f"team {team.name!r} member {member.user} is not a registered user")
            for ref in team.connectors:
                org_id, name = parse_team_ref(ref)
                if org_id == org.id and name not in names:
                    raise UnknownEntity(f"connector {ref!r} does not resolve")

    def resolve_team(self, ref: str) -> Team:
        org_id, name = parse_team_ref(ref)
        if org_id not in self.store or self.store.kind_of(org_id) != "organization":
            raise UnknownEntity(f"unknown organization {org_id}")
        return self.store.get(org_id).team(name)

    def add_collaboration_space(self, space: CollaborationSpace) -> EntityId:
        return self.add(space)

    def _check_collaborationspace(self, space: CollaborationSpace):
        if not space.products:
            raise InvalidSpec("a collaboration space needs at least one product")
        for p in space.products:
            self.artifact(p)
        if not space.teams:
            raise InvalidSpec("a collaboration space needs at least one team")
        teams = {ref: self.resolve_team(ref) for ref in space.teams}
        for team in teams.values():
            for ref in team.connectors:
                self.resolve_team(ref)
        # connectors are treated as undirected edges
        adjacency = {ref: set() for ref in teams}
        for ref, team in teams.items():
            for peer in team.connectors:
                if peer in adjacency:
                    adjacency[ref].add(peer)
                    adjacency[peer].add(ref)
        start = space.teams[0]
        seen, stack = {start}, [start]
        while stack:
            for nxt in adjacency[stack.pop()] - seen:
                seen.add(nxt)
                stack.append(nxt)
        if seen != set(teams):
            raise InvalidSpec(f"teams {sorted(set(teams) - seen)} are not reachable via connectors")

    def spaces_containing(self, artifact: EntityId) -> list[CollaborationSpace]:
        out = []
        for space in self.store.latest("collaboration_space"):
            if any(artifact in self.composition_closure(p) for p in space.products):
                out.append(space)
        return out

    def rights_of(self, user: EntityId, artifact: EntityId) -> set[Right]:
        """Union of the user's role rights across teams of every collaboration
        space that covers ``artifact``."""
        rights: set[Right] = set()
        for space in self.spaces_containing(artifact):
            for ref in space.teams:
                for member in self.resolve_team(ref).members:
                    if member.user == user:
                        rights |= member.role.rights
        return rights

    def add_process(self, process: Process) -> EntityId:
        return self.add(process)

    def _check_process(self, process: Process):
        if not process.activities:
            raise InvalidSpec("a process needs at least one activity")
        for act in process.activities:
            if not act.name:
                raise InvalidSpec("activity name must be non-empty")
            for ref in act.inputs + act.outputs:
                self.technical_object(ref)
            for res in act.resources:
                if res.kind is ResourceKind.ACTOR:
                    uid = EntityId.parse(res.ref)
                    if uid not in self.store or self.store.kind_of(uid) != "user":
                        raise UnknownEntity(f"actor resource {res.ref} is not a registered user")

    def add_activity_domain_link(self, profile, activity: str, domain: str, *, id=None) -> EntityId:
        link = ActivityDomainLink(id=self._mint(id), profile=as_enum(Profile, profile),
                                  activity=activity, domain=domain)
        return self.add(link)

    def known_activities(self) -> set[str]:
        return {link.activity for link in self.store.latest("activity_domain_link")}

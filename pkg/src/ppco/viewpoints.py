"""Multi-level viewpoints and the batch filtering pipeline.

A user holds one viewpoint per (activity, product). Filtering a product for a
user runs five steps: collect the user's viewpoints, keep those on the
product, order them by decreasing competence, look up the configured
(batch, level) list of each, and fold the lists together keeping the most
important (lowest) level of every batch.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

from ppco.errors import (
    CompetenceRuleViolated,
    DuplicateViewpoint,
    InvalidLevel,
    InvalidSpec,
    InvalidThreshold,
    MixedProducts,
    NoConnectionConfigured,
    NoViewpointOnProduct,
    UnknownActivity,
    UnknownBatchSelector,
    UnknownProduct,
    UnknownUser,
)
from ppco.ids import EntityId
from ppco.model import ProductModel, RelationshipKind, as_enum
from ppco.store import Store, stored

LEVELS = (1, 2, 3)
TABLE_ID = EntityId("config", 1)


class Situation(str, Enum):
    DESIGNER = "Designer"
    ENGINEER = "Engineer"
    SUPPLIER = "Supplier"
    MANUFACTURER = "Manufacturer"
    DISTRIBUTOR = "Distributor"
    MANAGER = "Manager"
    PARTNER = "Partner"
    CLIENT = "Client"
    OTHER = "OtherSituation"


def _check_level(level, what="level"):
    if isinstance(level, bool) or level not in LEVELS:
        raise InvalidLevel(f"{what} must be one of 1, 2, 3 (got {level!r})")
    return level


@stored("user")
@dataclass(frozen=True, slots=True)
class User:
    id: EntityId
    name: str
    situation: Situation
    competences: tuple[tuple[str, int], ...]

    def level(self, activity: str) -> int | None:
        return dict(self.competences).get(activity)

    @property
    def expert_activity(self) -> str:
        return next(a for a, lvl in self.competences if lvl == 3)


def check_competences(competences) -> tuple[tuple[str, int], ...]:
    items = tuple((competences.items() if isinstance(competences, Mapping) else competences))
    if not items:
        raise CompetenceRuleViolated("a user needs at least one competence")
    names = [a for a, _ in items]
    if any(not isinstance(a, str) or not a for a in names) or len(set(names)) != len(names):
        raise InvalidSpec("activity names must be distinct non-empty strings")
    for activity, level in items:
        _check_level(level, f"competence for {activity!r}")
    experts = [a for a, lvl in items if lvl == 3]
    if len(experts) != 1:
        raise CompetenceRuleViolated(
            f"exactly one activity must have competence 3, found {len(experts)} ({', '.join(experts) or 'none'})")
    return tuple((a, int(lvl)) for a, lvl in items)


@stored("viewpoint")
@dataclass(frozen=True, slots=True)
class Viewpoint:
    id: int
    user_id: EntityId
    domain_name: str
    activity: str
    focus: str
    product_id: EntityId
    competence: int
    relationship_ref: int | None = None

    @property
    def store_key(self) -> EntityId:
        return EntityId("vp", self.id)

    @property
    def label(self) -> str:
        return f"{self.id:02d}"


@dataclass(frozen=True, slots=True)
class Family:
    name: str
    batches: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class BatchLevel:
    batch: str
    level: int


@dataclass(frozen=True, slots=True)
class ConnectionEntry:
    activity: str
    focus: str
    batches: tuple[BatchLevel, ...]


SELECTOR_SOURCES = ("artifact", "function", "form", "behavior", "flow", "relationship", "constraint",
                    "requirement", "material", "attribute", "team", "job_view")
SELECTOR_SCOPES = ("root", "children", "closure")


@dataclass(frozen=True, slots=True)
class BatchSelector:
    """Where the objects of a batch come from, relative to the filtered product."""

    source: str
    scope: str = "root"
    kinds: tuple[str, ...] = ()
    prefix: str | None = None
    view: str | None = None

    def __post_init__(self):
        if self.source not in SELECTOR_SOURCES:
            raise InvalidSpec(f"unknown selector source {self.source!r}")
        if self.scope not in SELECTOR_SCOPES:
            raise InvalidSpec(f"unknown selector scope {self.scope!r}")
        if self.source == "job_view" and not self.view:
            raise InvalidSpec("job_view selectors name a view")
        if self.source == "attribute" and not self.prefix:
            raise InvalidSpec("attribute selectors need a key prefix")
        for k in self.kinds:
            as_enum(RelationshipKind, k)


@stored("connection_table")
@dataclass(frozen=True, slots=True)
class ConnectionTable:
    families: tuple[Family, ...]
    entries: tuple[ConnectionEntry, ...]
    selectors: tuple[tuple[str, BatchSelector], ...] = ()
    id: EntityId = TABLE_ID

    def __post_init__(self):
        known = set()
        for fam in self.families:
            if len(set(fam.batches)) != len(fam.batches):
                raise InvalidSpec(f"family {fam.name!r} lists a batch twice")
            known.update(fam.batches)
        seen = set()
        for entry in self.entries:
            key = (entry.activity, entry.focus)
            if key in seen:
                raise InvalidSpec(f"connection for {key} configured twice")
            seen.add(key)
            names = [b.batch for b in entry.batches]
            if len(set(names)) != len(names):
                raise InvalidSpec(f"connection {key} lists a batch twice")
            for b in entry.batches:
                _check_level(b.level, f"level of batch {b.batch!r}")
                if b.batch not in known:
                    raise InvalidSpec(f"batch {b.batch!r} belongs to no family")

    def lookup(self, activity: str, focus: str) -> tuple[BatchLevel, ...] | None:
        for entry in self.entries:
            if entry.activity == activity and entry.focus == focus:
                return entry.batches
        return None

    def selector(self, batch: str) -> BatchSelector | None:
        return dict(self.selectors).get(batch)


@dataclass(frozen=True, slots=True)
class Connection:
    batch: str
    level: int
    contributors: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class FilterResult:
    user_id: EntityId
    product_id: EntityId
    viewpoint_order: tuple[int, ...]
    connections: tuple[Connection, ...]

    def levels(self) -> dict[str, int]:
        return {c.batch: c.level for c in self.connections}


@dataclass(frozen=True, slots=True)
class ObjectRef:
    ref: str
    kind: str
    name: str
    revision: int | None = None


@dataclass(frozen=True, slots=True)
class PayloadFragment:
    batch: str
    level: int
    objects: tuple[ObjectRef, ...]


# -- pure pipeline steps ----------------------------------------------------

def filtering_list_vp_artifact(vps: Iterable[Viewpoint], product_id: EntityId) -> list[Viewpoint]:
    """Keep the viewpoints held on exactly ``product_id``."""
    return [vp for vp in vps if vp.product_id == product_id]


def classification_vp(vps: Iterable[Viewpoint]) -> list[Viewpoint]:
    """Order by decreasing competence, ties by increasing VP number."""
    vps = list(vps)
    if len({vp.product_id for vp in vps}) > 1:
        raise MixedProducts("viewpoints to classify must all be on the same product")
    return sorted(vps, key=lambda vp: (-vp.competence, vp.id))


def optimize_list_connexion_level(accumulated: Sequence[Connection], new: Sequence[Connection]) -> tuple[Connection, ...]:
    """Union of two batch lists; a batch present in both keeps the lower level
    and the contributors of both. Order: ``accumulated`` first, then batches
    new to it in ``new``'s order. Each list must have unique batch names."""
    merged: dict[str, tuple[int, tuple[int, ...]]] = {c.batch: (c.level, c.contributors) for c in accumulated}
    for c in new:
        if c.batch in merged:
            level, contributors = merged[c.batch]
            extra = tuple(v for v in c.contributors if v not in contributors)
            merged[c.batch] = (min(level, c.level), contributors + extra)
        else:
            merged[c.batch] = (c.level, c.contributors)
    return tuple(Connection(name, level, contributors) for name, (level, contributors) in merged.items())


class ViewpointEngine:
    def __init__(self, store: Store, model: ProductModel):
        self.store = store
        self.model = model

    # -- configuration ------------------------------------------------------

    @property
    def table(self) -> ConnectionTable | None:
        return self.store.get(TABLE_ID) if TABLE_ID in self.store else None

    def set_table(self, table: ConnectionTable) -> int:
        with self.store.mutex:
            if self.table == table:
                return self.store.revisions(TABLE_ID)[-1]
            return self.store.put(table)

    # -- users --------------------------------------------------------------

    def user(self, user_id: EntityId) -> User:
        if user_id not in self.store or self.store.kind_of(user_id) != "user":
            raise UnknownUser(f"unknown user {user_id}")
        return self.store.get(user_id)

    def users(self) -> list[User]:
        return self.store.latest("user")

    def register_user(self, name: str, situation, competences, *, id=None) -> EntityId:
        user = User(
            id=EntityId.parse(id) if id is not None else self.store.mint(self.model.namespace),
            name=name,
            situation=as_enum(Situation, situation),
            competences=check_competences(competences),
        )
        return self.add_user(user)

    def add_user(self, user: User) -> EntityId:
        if not user.name:
            raise InvalidSpec("user name must be non-empty")
        check_competences(user.competences)
        with self.store.mutex:
            if user.id in self.store:
                raise InvalidSpec(f"id {user.id} is already in use")
            self.store.put(user)
        return user.id

    def update_competences(self, user_id: EntityId, competences) -> None:
        """Replace a user's competences; viewpoint competences and level-3
        links follow. Activities still backing a viewpoint cannot be dropped."""
        with self.store.mutex:
            user = self.user(user_id)
            new = check_competences(competences)
            levels = dict(new)
            mine = self.restitution_list_viewpoint(user_id)
            for vp in mine:
                if vp.activity not in levels:
                    raise UnknownActivity(f"viewpoint {vp.label} still uses activity {vp.activity!r}")
            self.store.put(User(user.id, user.name, user.situation, new))
            for vp in mine:
                if vp.competence != levels[vp.activity]:
                    self.store.put(_replace_vp(vp, competence=levels[vp.activity]))
            for product in {vp.product_id for vp in mine}:
                self._rewire(user_id, product)

    # -- viewpoints ---------------------------------------------------------

    def viewpoint(self, number: int) -> Viewpoint:
        return self.store.get(EntityId("vp", number))

    def viewpoints(self) -> list[Viewpoint]:
        return self.store.latest("viewpoint")

    def register_viewpoint(self, user_id, domain_name: str, activity: str, focus: str, product_id, *,
                           id: int | None = None) -> int:
        user_id, product_id = EntityId.parse(user_id), EntityId.parse(product_id)
        with self.store.mutex:
            user = self.user(user_id)
            if not self.model.is_artifact(product_id):
                raise UnknownProduct(f"unknown product {product_id}")
            competence = user.level(activity)
            if competence is None:
                raise UnknownActivity(f"{user.name} has no competence in {activity!r}")
            for vp in self.restitution_list_viewpoint(user_id):
                if vp.activity == activity and vp.product_id == product_id:
                    raise DuplicateViewpoint(
                        f"{user.name} already holds viewpoint {vp.label} for {activity!r} on {product_id}")
            number = id if id is not None else self.store.mint("vp").number
            if isinstance(number, bool) or not isinstance(number, int) or number <= 0:
                raise InvalidSpec("viewpoint numbers are positive integers")
            if EntityId("vp", number) in self.store:
                raise DuplicateViewpoint(f"viewpoint number {number:02d} is taken")
            vp = Viewpoint(number, user_id, domain_name, activity, focus, product_id, competence)
            self.store.put(vp)
            self._rewire(user_id, product_id)
            return number

    def _rewire(self, user_id: EntityId, product_id: EntityId):
        """Point every lower-competence viewpoint of the user on the product at
        the level-3 one (whichever was registered first)."""
        mine = filtering_list_vp_artifact(self.restitution_list_viewpoint(user_id), product_id)
        expert = next((vp.id for vp in mine if vp.competence == 3), None)
        for vp in mine:
            want = None if vp.id == expert else expert
            if vp.relationship_ref != want:
                self.store.put(_replace_vp(vp, relationship_ref=want))

    def related_viewpoints(self, number: int) -> list[Viewpoint]:
        return [vp for vp in self.viewpoints() if vp.relationship_ref == number]

    def restitution_list_viewpoint(self, user_id: EntityId) -> list[Viewpoint]:
        """Step 1: every viewpoint of the user, by VP number."""
        self.user(user_id)
        return sorted((vp for vp in self.viewpoints() if vp.user_id == user_id), key=lambda vp: vp.id)

    filtering_list_vp_artifact = staticmethod(filtering_list_vp_artifact)
    classification_vp = staticmethod(classification_vp)
    optimize_list_connexion_level = staticmethod(optimize_list_connexion_level)

    def restitution_list_connexion_level(self, vp: Viewpoint) -> tuple[Connection, ...]:
        """Step 4: the configured (batch, level) list for the viewpoint's
        activity and focus, in configuration order."""
        table = self.table
        batches = table.lookup(vp.activity, vp.focus) if table else None
        if batches is None:
            raise NoConnectionConfigured(f"no batches configured for ({vp.activity!r}, {vp.focus!r})")
        return tuple(Connection(b.batch, b.level, (vp.id,)) for b in batches)

    def filtering_info_artifact(self, product_id, user_id) -> FilterResult:
        product_id, user_id = EntityId.parse(product_id), EntityId.parse(user_id)
        vps = self.restitution_list_viewpoint(user_id)
        if not self.model.is_artifact(product_id):
            raise UnknownProduct(f"unknown product {product_id}")
        on_product = filtering_list_vp_artifact(vps, product_id)
        if not on_product:
            raise NoViewpointOnProduct(f"user {user_id} holds no viewpoint on {product_id}")
        ordered = classification_vp(on_product)
        merged: tuple[Connection, ...] = ()
        for i, vp in enumerate(ordered):
            current = self.restitution_list_connexion_level(vp)
            merged = optimize_list_connexion_level(merged, current) if i else current
        return FilterResult(user_id, product_id, tuple(vp.id for vp in ordered), merged)

    # -- payload ------------------------------------------------------------

    def materialize(self, result: FilterResult, threshold: int = 3) -> tuple[PayloadFragment, ...]:
        """Resolve every batch with level <= ``threshold`` to model objects."""
        if isinstance(threshold, bool) or threshold not in LEVELS:
            raise InvalidThreshold(f"threshold must be 1, 2 or 3 (got {threshold!r})")
        table = self.table
        fragments = []
        for conn in result.connections:
            if conn.level > threshold:
                continue
            selector = table.selector(conn.batch) if table else None
            if selector is None:
                raise UnknownBatchSelector(f"no selector configured for batch {conn.batch!r}")
            objects = tuple(_dedupe(self._select(selector, result.product_id)))
            fragments.append(PayloadFragment(conn.batch, conn.level, objects))
        return tuple(fragments)

    def _scope(self, selector: BatchSelector, product: EntityId) -> list[EntityId]:
        if selector.scope == "root":
            return [product]
        if selector.scope == "children":
            return self.model.children(product)
        return self.model.composition_closure(product)

    def _select(self, sel: BatchSelector, product: EntityId):
        model = self.model
        scope = self._scope(sel, product)
        in_scope = set(scope)
        if sel.source == "artifact":
            for aid in scope:
                yield _ref(model.get(aid))
        elif sel.source in ("function", "form", "behavior", "flow"):
            for aid in scope:
                for obj in model.owned(aid, sel.source):
                    yield _ref(obj)
        elif sel.source == "material":
            for aid in scope:
                for form in model.owned(aid, "form"):
                    mat = form.material
                    yield ObjectRef(f"{form.id}#material", "material",
                                    mat.name + (f" {mat.grade}" if mat.grade else ""), form.revision)
        elif sel.source == "attribute":
            for aid in scope:
                art = model.get(aid)
                for key, value in art.attributes:
                    if key.startswith(sel.prefix):
                        yield ObjectRef(f"{aid}#{key}", "attribute", f"{key}={value}", art.revision)
        elif sel.source in ("relationship", "constraint"):
            kinds = {RelationshipKind(k) for k in sel.kinds}
            for rel in self.store.latest("relationship"):
                if model.owner(rel.members[0]) not in in_scope or (kinds and rel.kind not in kinds):
                    continue
                if sel.source == "relationship":
                    yield ObjectRef(str(rel.id), rel.kind.value,
                                    " / ".join(model.get(m).name for m in rel.members))
                else:
                    for con in rel.constraints:
                        yield ObjectRef(str(con.id), "constraint", con.expression)
            if sel.source == "constraint":
                for con in self.store.latest("constraint"):
                    if con.subject is not None and model.owner(con.subject) in in_scope:
                        yield ObjectRef(str(con.id), "constraint", con.expression)
        elif sel.source == "requirement":
            for req in self.store.latest("requirement"):
                if model.owner(req.target) in in_scope:
                    yield ObjectRef(str(req.id), "requirement", req.text)
        elif sel.source == "team":
            for space in model.spaces_containing(product):
                for ref in space.teams:
                    for member in model.resolve_team(ref).members:
                        yield ObjectRef(f"{ref}#{member.user}", "member",
                                        f"{self.user(member.user).name} ({member.role.name})")
        elif sel.source == "job_view":
            for rel, obj in model.resolve_job_view(sel.view, product):
                yield _ref(obj)


def _ref(obj) -> ObjectRef:
    return ObjectRef(str(obj.id), obj.kind.value, obj.name, obj.revision)


def _dedupe(refs):
    seen = set()
    for r in refs:
        if r.ref not in seen:
            seen.add(r.ref)
            yield r


def _replace_vp(vp: Viewpoint, **changes) -> Viewpoint:
    return dataclasses.replace(vp, **changes)

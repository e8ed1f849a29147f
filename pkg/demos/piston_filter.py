"""Viewpoint filtering on the bundled piston product.

Georges is a designer with two viewpoints on the piston: a geometry one
where he is an expert and a mechanical one where he contributes less. Each
viewpoint yields a list of information batches at a collaboration level,
and the filter merges them keeping the most permissive level per batch.
"""

import ppco
from ppco.cli import format_table
from ppco.ids import EntityId

PISTON = EntityId("demo", 381009)
GEORGES = EntityId("demo", 18936)

ws = ppco.piston_workspace()
engine = ws.engine
result = engine.filtering_info_artifact(PISTON, GEORGES)

for number in result.viewpoint_order:
    vp = engine.viewpoint(number)
    batches = engine.restitution_list_connexion_level(vp)
    print(f"viewpoint {number:02d}: {vp.activity}/{vp.focus}, competence {vp.competence}, {len(batches)} batches")

print()
print(format_table(result), end="")

print()
print("level per batch:", result.levels())

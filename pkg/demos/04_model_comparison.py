"""Compare cognitive models by item-stratified cross-validated RMSE.

Folds partition items, so a model only scores well if its knowledge
components transfer information to problems never seen during the fold's
fit. The single-shared-KC baseline generalizes; the one-KC-per-item
baseline cannot say anything about held-out items; the generator's own
Q-matrix sets the reference.
"""

from cogrl.afm import CVConfig, compare_models
from cogrl.cogmodel import faculty_transfer, identical_transfer
from cogrl.ingest import AfmLogSynthSpec, VisualSynthSpec, synth_afm_log, synth_visual

oracle = synth_visual(VisualSynthSpec(seed=7)).extras["oracle_q"]
log, _, _ = synth_afm_log(AfmLogSynthSpec(students=50, seed=101, q=oracle))
print(f"log: {len(log)} first attempts over {oracle.n_items} items")

items = oracle.item_ids
table = compare_models(
    log,
    [("faculty", faculty_transfer(items)),
     ("identical", identical_transfer(items)),
     ("oracle", oracle)],
    cv=CVConfig(folds=10, seed=3))
print()
print(table.to_text())
print("\nexpected pattern: identical worst (no transfer to held-out items),")
print("oracle best, faculty in between")

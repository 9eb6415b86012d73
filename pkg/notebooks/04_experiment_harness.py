# %% [markdown]
# # Running a sweep from a config
#
# The same path the `fedban` command uses: load a JSON config, expand it along
# one axis, and write per-run and plot-ready CSV files.

# %%
import tempfile
from pathlib import Path

from fedban import harness

cfg = harness.load_config(Path(__file__).resolve().parent.parent / "configs" / "quick.json")
print("config hash", cfg.config_hash[:12])

# %%
out = Path(tempfile.mkdtemp())
records = []
for label, sub in harness.sweep_configs(cfg, "dimension"):
    recs = harness.run_experiment(sub)
    harness.write_csv(recs, out / f"runs_{label}.csv")
    records += recs
harness.emit_plot_data(records, "dimension", out / "plot_dimension.csv")
print((out / "plot_dimension.csv").read_text())

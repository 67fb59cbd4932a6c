"""How well does a ReLU network regress element-wise powers?"""

# %%
from powconv.config import default_config
from powconv.synthdata import make_power_regression_dataset, ratio_metric
from powconv.tables import run_table2

# %% [markdown]
# Each target is x ** a per element, with a random exponent per column.
# R is the summed absolute error over the summed target, in percent.

# %%
data = make_power_regression_dataset(8, 5, seed=0)
print("exponents:", data.exponents.round(2))
print("R of predicting the mean:", ratio_metric(data.y * 0 + data.y.mean(axis=0), data.y)[1])

# %% [markdown]
# A reduced grid.  The identity-exponent control is easy (R near zero) while
# true powers stay hard, and more hidden units barely help.

# %%
cfg = default_config("Table2").with_overrides(
    runs=2, epochs=10, out="demo_out/table2",
    data={"m_values": "16,64", "hidden_sizes": "64,256", "n_train": "5000", "n_test": "2000",
          "control_runs": "1", "control_epochs": "40"})
rows, _ = run_table2(cfg)
for r in rows:
    print(f"{r['row']:16s} M={r['M']:3d} hidden={r['hidden']:4d} R={r['all_r_mean']} (best {r['best_r_mean']})")

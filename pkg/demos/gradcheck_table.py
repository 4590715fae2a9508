"""Policy-gradient estimator against common-random-number finite differences."""

from ctac.harness import gradcheck_report, load_config

cfg = load_config("gradcheck", overrides={"lq_ergodic": {"steps": 200_000}})
print(f"{'toy':>14} {'comp':>5} {'estimate':>11} {'se':>9} {'fd':>11} {'rel err':>8}")
for r in gradcheck_report(cfg):
    print(f"{r['toy']:>14} {r['component']:>5} {r['estimate']:11.5f} {r['se']:9.2e} {r['fd']:11.5f} "
          f"{r['rel_err']:8.3%}")

"""
Agent panel and leave-one-out evaluation
========================================

Several backends discuss a case until they agree. Here all of them are
offline mocks, so the numbers say nothing about real models.
"""

from scbu.ensemble import AgentsConfig
from scbu.eval_harness import EnsembleConfig, PipelineConfig, SynthSpec, group_statistics, loocv_run, synth_dataset
from scbu.llm_gateway import BackendSpec, MockBackend

cases = synth_dataset(SynthSpec(n_asd=8, n_td=8, seed=1))

# two agents with different rules and a decision maker
agents = (
    MockBackend(BackendSpec("strict", options={"share": 0.25})),
    MockBackend(BackendSpec("lenient", options={"share": 0.45})),
)
panel = EnsembleConfig("agents", agents, decision_maker=MockBackend(BackendSpec("chair")),
                       agents=AgentsConfig(max_rounds=2))

report = loocv_run(cases, PipelineConfig(), panel)
print(report.to_text())

###############################################################################
# Group comparisons use Welch's t-test on per-case measures.

for s in group_statistics(cases):
    print(f"{s.variable:18s} TD {s.td_mean:7.2f}  ASD {s.asd_mean:7.2f}  p={s.p_value:.3f}")

"""
From a behavior log to a screening verdict
==========================================

One synthetic session goes through every stage: response events, the
behavior script, the prompt, and an offline mock judgment.
"""

from scbu import build_prompt, compile_script, parse_events
from scbu.eval_harness import SynthSpec, synth_dataset
from scbu.llm_gateway import BackendSpec, MockBackend, detect

# a tiny labelled dataset; the generator is deterministic for a given seed
case = synth_dataset(SynthSpec(n_asd=1, n_td=0, seed=3))[0]
print(case.case_id, case.label, f"{case.log.duration_s:.1f} s")

###############################################################################
# Response events are found from frame-level gaze, gesture and expression.
# Each one carries its paradigm and target region.

events = parse_events(case.log, case.manifest)
for e in events[:8]:
    print(f"{e.kind:6s} {e.start_s:6.1f}-{e.end_s:6.1f}  {e.paradigm:4s} {e.target or ''}")

###############################################################################
# The compiler turns instructions and responses into template sentences.

script = compile_script(events, case.manifest)
print(script.render()[:900])

###############################################################################
# The prompt wraps the script with domain knowledge and a fixed answer format.
# The mock backend needs no network; its answer ends in the judgment line.

bundle = build_prompt(script)
result = detect(bundle, MockBackend(BackendSpec("mock")), case.case_id)
print(result.raw_response)
print("verdict:", result.label)

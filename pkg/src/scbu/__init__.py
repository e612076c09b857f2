"""Script-centric behavior understanding: behavioral logs to LLM-based ASD screening."""
from .behavior_log import BehaviorLog, SessionManifest, child_valence_series, load_log, save_log
from .emotion_dynamics import EmotionConfig, find_dynamic_points, merge_segments
from .prompt_builder import PromptProfile, build_prompt, parse_verdict
from .response_parser import ParserConfig, measure_responses, parse_events
from .script_compiler import compile_script

__all__ = [
    "BehaviorLog", "SessionManifest", "child_valence_series", "load_log", "save_log",
    "EmotionConfig", "find_dynamic_points", "merge_segments",
    "PromptProfile", "build_prompt", "parse_verdict",
    "ParserConfig", "measure_responses", "parse_events",
    "compile_script",
]

__version__ = "0.1.0"

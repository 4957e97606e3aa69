"""Walk through the prompt agent: draft, judge, redraft, then the novelty filter.

Everything runs against the offline simulator, so the script is fast,
deterministic, and needs no credentials. Run it as:

    python3 demos/01_prompt_agent.py
"""

import tempfile
from pathlib import Path

from synthforge import (
    MemoryBuffer,
    PipelineConfig,
    PromptAgent,
    diversity_filter,
    load_vocabulary,
)
from synthforge.backends import build_provider_bundle
from synthforge.backends.simulator import SimulatorFixtures


def main():
    workdir = Path(tempfile.mkdtemp(prefix="synthforge-demo-"))
    vocab_path = workdir / "classes.txt"
    vocab_path.write_text("cat\ndog\nsofa\n", encoding="utf-8")
    vocabulary = load_vocabulary(vocab_path)
    config = PipelineConfig(prompts_per_class=5, random_seed=42)
    bundle = build_provider_bundle({"embedding_dim": 64}, "simulated", config.random_seed)

    print("=== 1. one refinement episode, scores visible ===")
    agent = PromptAgent(vocabulary, config, bundle)
    record = agent.refine_until_accepted("cat")
    print(f"accepted draft for 'cat' (score {record.quality_score:.4f}):")
    print(f"  {record.text}")
    for superseded in agent.records:
        print(f"  superseded ({superseded.quality_score:.4f}): {superseded.text[:70]}...")

    print()
    print("=== 2. forcing the judge's hand with fixtures ===")
    # pin the drafts and their scores so the loop's behavior is legible
    fixtures = SimulatorFixtures(
        generation={("dog", 0): "a blurry dog", ("dog", 1): "a dog on a beach at dawn"},
        judge_scores={"a blurry dog": 0.62, "a dog on a beach at dawn": 0.97},
    )
    scripted_bundle = build_provider_bundle({"embedding_dim": 64}, "simulated", 0)
    scripted_bundle.text.state.fixtures = fixtures
    scripted = PromptAgent(vocabulary, config, scripted_bundle)
    record = scripted.refine_until_accepted("dog")
    print(f"draft 1 scored 0.62 < epsilon {config.epsilon}: redrafted")
    print(f"draft 2 scored 0.97: accepted -> {record.text!r}")

    print()
    print("=== 3. the sequential novelty filter is order-sensitive ===")
    drafts = agent.run_class("sofa")
    print(f"run_class('sofa') accepted {len(drafts)} of {config.prompts_per_class} drafts")
    memory = MemoryBuffer(64)
    duplicates = diversity_filter(drafts + drafts, memory, config.delta)
    print(
        f"feeding the same {len(drafts)} prompts twice through a fresh filter "
        f"accepts {len(duplicates)}: the second copies hit the memory buffer"
    )

    print()
    print("=== 4. whole-vocabulary run ===")
    fresh = PromptAgent(vocabulary, config, build_provider_bundle({"embedding_dim": 64}, "simulated", 42))
    accepted = fresh.run()
    by_class = {}
    for r in accepted:
        by_class.setdefault(vocabulary.name_of(r.class_id), []).append(r)
    for name, records in by_class.items():
        print(f"  {name}: {len(records)} accepted, e.g. {records[0].text[:60]}...")
    print(f"memory buffer now holds {len(fresh.memory)} unit vectors")


if __name__ == "__main__":
    main()

"""Show the dual similarity gate deciding which (image, class) pairs to keep.

The text gate compares each prompt to every class name; survivors go to the
image-side ranking, which keeps the top 2 classes per image. The demo prints
both score tables so the decisions are inspectable.

    python3 demos/02_dual_gate.py
"""

import tempfile
from pathlib import Path

from synthforge import (
    ImageAgent,
    PipelineConfig,
    PromptRecord,
    embed_class_names,
    load_vocabulary,
    normalize,
    scaled_similarity,
)
from synthforge.backends import build_provider_bundle


def main():
    workdir = Path(tempfile.mkdtemp(prefix="synthforge-demo-"))
    vocab_path = workdir / "classes.txt"
    vocab_path.write_text("cat\ndog\nsofa\nbicycle\n", encoding="utf-8")
    vocabulary = load_vocabulary(vocab_path)
    config = PipelineConfig()
    bundle = build_provider_bundle({"embedding_dim": 128}, "simulated", 7)
    agent = ImageAgent(vocabulary, config, bundle, workdir)

    text = "A weathered photo of a dog resting nearby; the dog appears alert."
    prompt = PromptRecord(
        "p0", 1, text,
        embedding=normalize(bundle.embedding.embed_text(text)),
        quality_score=0.98, status="accepted",
    )
    print(f"prompt: {text}")

    print()
    print(f"=== text gate (keep classes with scaled similarity > {config.gamma_text}) ===")
    class_vectors = embed_class_names(vocabulary, bundle.embedding)
    for cid, name in vocabulary.classes:
        score = scaled_similarity(prompt.embedding, class_vectors[cid])
        verdict = "KEEP" if score > config.gamma_text else "drop"
        print(f"  {name:<8} {score:.4f}  {verdict}")

    image, data = agent.synthesize(prompt)
    print()
    print(f"synthesized {image.file_path} ({len(data)} bytes, seed {image.provider_seed})")

    pairs, selected = agent.dual_gate([image], {"p0": prompt})
    print()
    print(f"=== image side (top {config.top_n} among text-gate survivors) ===")
    for pair in pairs:
        name = vocabulary.name_of(pair.class_id)
        print(f"  {name:<8} text {pair.text_score:.4f}  image {pair.image_score:.4f}  RETAINED")
    labels = sorted(vocabulary.name_of(c) for c in selected[image.image_id])
    print(f"pseudo-labels for this image: {labels}")

    print()
    print("=== a prompt that clears no gate still keeps its image ===")
    off_topic = "Quarterly spreadsheet of accrued maintenance fees."
    stray = PromptRecord(
        "p1", 0, off_topic,
        embedding=normalize(bundle.embedding.embed_text(off_topic)),
        quality_score=0.96, status="accepted",
    )
    result = agent.build_high_confidence_set([stray])
    record = result.images[0]
    print(f"candidate classes: none above {config.gamma_text}; retained pairs: {len(result.pairs)}")
    print(f"image stays on disk for the relabeler: {record.file_path} (labels {set(record.pseudo_labels)})")


if __name__ == "__main__":
    main()

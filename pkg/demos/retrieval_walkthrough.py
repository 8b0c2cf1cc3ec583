"""
Hybrid clip retrieval and temporal fusion
=========================================

Builds a four-clip database with the offline mock backend, then shows how the
lexical weight beta reorders results and how neighbouring hits fuse into
event blocks.
"""

import json
import tempfile
from pathlib import Path

from PIL import Image

from adreason.backends import MockBackend, MockScript
from adreason.ingest import Utterance, VideoMeta, build_database
from adreason.retrieval import HybridQuery, search_clips, temporal_fusion

# A 20 second ad sampled at 1 FPS. The frames are plain colour swatches; the
# mock captioner supplies the descriptions we would otherwise get from a model.
work = Path(tempfile.mkdtemp(prefix="adreason-demo-"))
frames = {}
for t in range(20):
    path = work / "frames" / f"{t}.jpg"
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (32, 24), (12 * t, 80, 160)).save(path)
    frames[float(t)] = path

captions = [
    "A woman jogs along a river at sunrise.",
    "Close-up of white running shoes splashing through a puddle.",
    "She stops and checks a smartwatch, smiling.",
    "A black end card with the slogan KEEP MOVING.",
]
rules = [
    {"match": {"task": "caption", "contains": [f'"clip_start_time": {5 * i},']},
     "response": {"text": json.dumps({"clip_description": c, "subject_registry": {}})}}
    for i, c in enumerate(captions)
]
rules.append({"match": {"task": "ocr", "image_contains": "/17.jpg"}, "response": {"text": "KEEP MOVING"}})
rules.append({"match": {"task": "ocr"}, "response": {"text": "NO_TEXT"}})
backend = MockBackend(MockScript.from_dict({"mode": "first_match", "embedding_fallback": "hash",
                                            "dimension": 128, "rules": rules}))

transcript = [Utterance(16.0, 19.0, "Keep moving.")]
db = build_database(VideoMeta("jog", 20.0), frames, transcript, backend, work / "db")
print(f"{len(db.clips)} clips, on-screen text at {[t for t, lines in sorted(db.ocr.items()) if lines]} s")

# With beta = 0 the ranking is pure embedding similarity, and the query's
# wording is closest to the shoe close-up. Raising beta rewards clips whose
# caption, speech or on-screen text contains the keywords: the end card.
query_text = "white running shoes slogan"
vector = backend.embed_one(query_text)
keywords = ("slogan", "keep moving")
for beta in (0.0, 0.5, 2.0):
    ranked = search_clips(db, HybridQuery(query_text, vector, keywords, beta), top_k=2)
    print(f"beta={beta}: " + ", ".join(f"clip {s.index} ({s.semantic:.2f} + {beta}*{s.lexical:.2f})" for s in ranked))

# Fusion merges hits that sit less than 3 s apart, or whose clip documents are
# very similar, into one event block. Clips 0 and 1 touch; clip 3 stands alone.
picked = [s for s in search_clips(db, HybridQuery(query_text, vector, keywords, 1.0), top_k=4) if s.index != 2]
for block in temporal_fusion(picked, db):
    print(f"block {block.start:g}-{block.end:g} s, clips {block.members}, score {block.score:.2f}")

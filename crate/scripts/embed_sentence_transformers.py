"""Command backbone for square: reads one JSON string per line on stdin and
prints one JSON embedding per line on stdout.

usage: embed_sentence_transformers.py MODEL_NAME_OR_PATH
"""

import json
import sys

from sentence_transformers import SentenceTransformer


def main() -> None:
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    model = SentenceTransformer(sys.argv[1], device="cpu")
    texts = [json.loads(line) for line in sys.stdin if line.strip()]
    vectors = model.encode(texts, batch_size=32, normalize_embeddings=True, show_progress_bar=False)
    out = sys.stdout
    for v in vectors:
        out.write(json.dumps([float(x) for x in v]))
        out.write("\n")


if __name__ == "__main__":
    main()

"""Reference conformance model: deterministic echo over a 10-token vocabulary.

Generation repeats the last event token of the prompt (or the first
vocabulary token when the prompt is empty), log-probabilities are uniform
over the declared vocabulary, and the embedding is the normalized count of
each vocabulary token within the prefix. Deliberately trivial: any harness
must produce identical audit reports through this server and through an
in-process implementation of the same rules.
"""

from __future__ import annotations

import math

VOCAB = tuple(f"E{d}" for d in range(10))


class EchoModel:
    vocabulary = list(VOCAB)
    concurrent_safe = False

    def generate(self, prompt, statics, n, max_new, mode, seed, options):
        events = [t for t in prompt if isinstance(t, str)]
        last = events[-1] if events else VOCAB[0]
        return [[last] * max_new for _ in range(n)]

    def logprobs(self, tokens):
        return [math.log(1.0 / len(VOCAB))] * (len(tokens) - 1)

    def embed(self, tokens, prefix_len):
        counts = [0.0] * len(VOCAB)
        index = {c: i for i, c in enumerate(VOCAB)}
        for tok in tokens[:prefix_len]:
            if isinstance(tok, str) and tok in index:
                counts[index[tok]] += 1.0
        return [c / prefix_len for c in counts]


def reference_echo_model() -> EchoModel:
    return EchoModel()


def main() -> None:
    from .server import serve

    serve(reference_echo_model)


if __name__ == "__main__":
    main()

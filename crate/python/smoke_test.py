"""Smoke test for the Python bindings.

Build first with `cargo build --release -p ttsfront-py`; the script copies
the shared library next to a temp dir as `ttsfront.so` and imports it.
Pass a different library path as the first argument if needed.
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent

TINY = """\
seed = 3
output_dir = "run"

[train]
iterations = 6
batch_size = 4
validate_every = 0

[model.trunk]
char_emb_dim = 4
conv_channels = 4
lstm_hidden = 4
xformer_hidden = 8
xformer_ff_dim = 8
attn_heads = 2
lm_last_layer = 2

[model.heads]
ff_dim = 8

[model.encoder]
layers = 2
dim = 8
heads = 2
ff_dim = 8

[data.train]
tn = "corpus/tn.jsonl"
pos = "corpus/pos.jsonl"
hd = "corpus/hd.tsv"
"""


def load_module(lib):
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "ttsfront.so")
    sys.path.insert(0, str(tmp))
    import ttsfront

    return ttsfront


def main():
    lib = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "target/release/libttsfront_py.so"
    tf = load_module(lib)

    toks = tf.tokenize("1/2023")
    assert [t.text for t in toks] == ["1", "/", "2023"], toks
    assert (toks[2].start, toks[2].end) == (2, 6)

    rules = tf.Ruleset.builtin()
    assert len(rules) == len(rules.names())
    at = rules.applicable("St. Mary's St.")
    assert "ST_AS_SAINT" in at[0] and "ST_AS_STREET" in at[0], at[0]

    assert abs(tf.wer("one three", "one two three") - 1 / 3) < 1e-12
    micro, macro = tf.hd_accuracy([("lead", "lead_1", "lead_1"), ("lead", "lead_2", "lead_1")])
    assert micro == macro == 0.5

    with tempfile.TemporaryDirectory() as d:
        d = pathlib.Path(d)
        tf.run_cli(["data", "synth", "--out", str(d / "corpus"), "--seed", "3"])
        (d / "tiny.toml").write_text(TINY)
        out = tf.run_cli(["train", "--manifest", str(d / "tiny.toml")])
        report = tf.parse_report(out)
        assert "tn.line_acc" in report, out

        model = tf.Model.load(str(d / "run" / "best.ckpt"))
        assert model.tasks == ["tn", "pos", "hd"]
        assert isinstance(model.normalize("7/8 inches"), str)
        assert [w for w, _ in model.tag("He read it .")] == ["He", "read", "it", "."]
        row = (d / "corpus" / "hd.tsv").read_text().splitlines()[1].split("\t")
        print("homograph:", model.homograph(row[2], int(row[3]), int(row[4])))

        try:
            tf.run_cli(["normalize", "--checkpoint", str(d / "missing.ckpt"), "x"])
        except (IOError, ValueError) as e:
            print("missing checkpoint rejected:", type(e).__name__)
        else:
            raise AssertionError("missing checkpoint accepted")

    print("python smoke test ok")


if __name__ == "__main__":
    main()

use pyo3::ffi::c_str;
use pyo3::prelude::*;
use ttsfront_py::ttsfront_py;

fn with_module(code: &std::ffi::CStr) {
    pyo3::append_to_inittab!(ttsfront_py);
    Python::with_gil(|py| {
        py.run(code, None, None).unwrap();
    });
}

#[test]
fn module_exposes_tokenizer_rules_and_metrics() {
    with_module(c_str!(
        r#"
import ttsfront as tf
assert [t.text for t in tf.tokenize("1/2023")] == ["1", "/", "2023"]
r = tf.Ruleset.builtin()
assert len(r) == len(r.names()) > 0
assert "ST_AS_SAINT" in r.applicable("St. Mary's St.")[0]
assert abs(tf.wer("one three", "one two three") - 1 / 3) < 1e-12
assert tf.parse_report("tn.wer\t0.5\n")["tn.wer"] == 0.5
try:
    tf.wer("a", "")
except ValueError:
    pass
else:
    raise AssertionError("empty reference accepted")
"#
    ));
}

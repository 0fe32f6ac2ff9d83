//! Compiles and runs a C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "qpma.h"

int main(void) {
    double y[30], x[60];
    for (int i = 0; i < 30; i++) {
        double a = (double)((i * 7) % 30) / 30.0;
        double b = (double)((i * 11 + 3) % 30) / 30.0;
        x[2 * i] = a;
        x[2 * i + 1] = b;
        y[i] = 2.0 * a + sin(6.0 * b) + 0.2 * sin(i * 1.7);
    }
    QpmaModel *model = NULL;
    if (qpma_fit(y, x, 30, 2, 0, &model) != QPMA_STATUS_OK) return 1;
    if (qpma_model_num_candidates(model) != 2) return 2;
    double w[2];
    if (qpma_model_weights(model, w, 2) != QPMA_STATUS_OK) return 3;
    if (fabs(w[0] + w[1] - 1.0) > 1e-10) return 4;
    double taus[2] = {0.1, 0.9};
    double out[2];
    if (qpma_model_predict(model, x, 1, 2, taus, 2, out) != QPMA_STATUS_OK) return 5;
    if (!(out[0] <= out[1])) return 6;
    if (qpma_model_predict(model, x, 1, 3, taus, 2, out) != QPMA_STATUS_INVALID_ARGUMENT) return 7;
    char *msg = qpma_last_error();
    if (msg == NULL) return 8;
    qpma_string_free(msg);
    qpma_model_free(model);
    printf("ok %s\n", qpma_version());
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("qpma.h").exists(), "header not generated");

    // tests live in target/<profile>/deps; the static library one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join("libqpma_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = work.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler not runnable");
    assert!(status.success(), "C compilation failed");
    let output = Command::new(&bin).output().unwrap();
    assert!(output.status.success(), "C program exited with {:?}", output.status.code());
    assert!(String::from_utf8_lossy(&output.stdout).starts_with("ok "));
}

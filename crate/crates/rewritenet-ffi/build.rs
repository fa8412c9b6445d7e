fn main() {
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("REWRITENET_H".to_string()),
        cpp_compat: true,
        documentation: true,
        ..cbindgen::Config::default()
    };
    cbindgen::Builder::new()
        .with_crate(env!("CARGO_MANIFEST_DIR"))
        .with_config(config)
        .generate()
        .expect("unable to generate C header")
        .write_to_file("include/rewritenet.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
}

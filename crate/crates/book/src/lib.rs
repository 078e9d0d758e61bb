//! The chapters of the guide in `book/src`, compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/integration.md")]
pub mod integration {}

#[doc = include_str!("../../../book/src/compass-gait.md")]
pub mod compass_gait {}

#[doc = include_str!("../../../book/src/seeds.md")]
pub mod seeds {}

#[doc = include_str!("../../../book/src/continuation.md")]
pub mod continuation {}

#[doc = include_str!("../../../book/src/direct.md")]
pub mod direct {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[cfg(test)]
mod tests {
    use std::path::Path;

    #[test]
    fn summary_lists_every_chapter() {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src");
        let summary = std::fs::read_to_string(src.join("SUMMARY.md")).unwrap();
        let mut chapters: Vec<String> = std::fs::read_dir(&src)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".md") && n != "SUMMARY.md")
            .collect();
        chapters.sort();
        for c in &chapters {
            assert!(summary.contains(&format!("({c})")), "{c} missing from SUMMARY.md");
        }
        let lib = include_str!("lib.rs");
        for c in &chapters {
            assert!(lib.contains(&format!("book/src/{c}")), "{c} not compiled");
        }
    }
}

use lusoforge::corpus::*;
use proptest::prelude::*;

const PARAGRAPH: &str = include_str!("fixtures/paragraph_pt.txt");

fn arb_doc() -> impl Strategy<Value = (u8, u8, bool, u8)> {
    (0u8..5, 0u8..6, any::<bool>(), 0u8..4)
}

fn build(specs: &[(u8, u8, bool, u8)]) -> Vec<Document> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(src, text, has_url, host))| {
            let body = match text {
                0 => String::new(),
                1 => "word ".repeat(200),
                2 => PARAGRAPH.to_string(),
                3 => format!("{PARAGRAPH} Nota final número {}.", i % 3),
                4 => format!("  {}  ", PARAGRAPH.replace(' ', "   ")),
                _ => format!("curto {i}"),
            };
            let mut d = Document::new(format!("d{i}"), body, Source::ALL[src as usize]);
            if has_url {
                d = d.with_url(["https://a.pt/x", "https://b.com.br", "http://c.com", "https://d.gov.pt"][host as usize]);
            }
            d
        })
        .collect()
}

fn config(near: bool) -> PipelineConfig {
    PipelineConfig {
        country_code: Some("pt".into()),
        near_dedup: near,
        ..PipelineConfig::default()
    }
}

proptest! {
    #[test]
    fn pipeline_is_idempotent(specs in prop::collection::vec(arb_doc(), 0..40), near in any::<bool>()) {
        let (once, _) = run_pipeline(build(&specs), &config(near), None).unwrap();
        let (twice, _) = run_pipeline(once.clone(), &config(near), None).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn pipeline_preserves_relative_order(specs in prop::collection::vec(arb_doc(), 0..40)) {
        let docs = build(&specs);
        let (kept, report) = run_pipeline(docs.clone(), &config(false), None).unwrap();
        let positions: Vec<usize> = kept.iter().map(|k| docs.iter().position(|d| d.id == k.id).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let mut flow = docs.len();
        for s in &report.stages {
            prop_assert_eq!(s.input, flow);
            prop_assert_eq!(s.kept + s.rejected, s.input);
            prop_assert_eq!(s.reasons.values().sum::<usize>(), s.rejected);
            flow = s.kept;
        }
        prop_assert_eq!(flow, kept.len());
    }
}

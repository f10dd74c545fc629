//! Byte-exact golden fixtures for the three template families.

use desklm_core::templating::{
    format_alpaca, format_chat, format_raw, strip_role_markers, ChatMessage, RawDoc, Role,
    SftRecord,
};

/// Default assistant system prompt used by the chat command.
const SYSTEM_PROMPT: &str = "Sei un an assistente AI per la lingua Italiana di nome LLaMAntino-3 ANITA (Advanced Natural-based interaction for the ITALian language). Rispondi nella lingua usata per la domanda in modo chiaro, semplice ed esaustivo.";

#[test]
fn chat_transcript_golden() {
    let messages = vec![
        ChatMessage::new(Role::System, SYSTEM_PROMPT),
        ChatMessage::new(Role::User, "Chi è Carlo Magno?"),
    ];
    let rendered = format_chat(&messages, true).unwrap();
    let golden = format!(
        "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n{SYSTEM_PROMPT}<|eot_id|><|start_header_id|>user<|end_header_id|>\nChi è Carlo Magno?<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n"
    );
    assert_eq!(rendered.as_bytes(), golden.as_bytes());
}

#[test]
fn raw_wrap_golden() {
    let d = RawDoc {
        text: "ciao".into(),
        language: "it".into(),
    };
    assert_eq!(
        format_raw(&d).unwrap().as_bytes(),
        "<|begin_of_text|> ciao <|eot_id|>".as_bytes()
    );
}

#[test]
fn alpaca_golden_with_and_without_input() {
    let base = SftRecord {
        system: "Sei un assistente.".into(),
        instruction: "Traduci in inglese.".into(),
        input: String::new(),
        output: "Hello.".into(),
    };
    assert_eq!(
        format_alpaca(&base).unwrap(),
        "<|begin_of_text|>Sei un assistente.\n\n### Instruction:\nTraduci in inglese.\n\n### Response:\nHello.<|eot_id|>"
    );
    let with_input = SftRecord {
        input: "Ciao.".into(),
        ..base
    };
    assert_eq!(
        format_alpaca(&with_input).unwrap(),
        "<|begin_of_text|>Sei un assistente.\n\n### Instruction:\nTraduci in inglese.\n\n### Input:\nCiao.\n\n### Response:\nHello.<|eot_id|>"
    );
}

#[test]
fn role_marker_fixtures() {
    let cases = [
        ("<< human >>: ciao", "ciao"),
        ("no markers here", "no markers here"),
        ("a << assistant >>: b << human >>: c", "a b c"),
        ("<< human >>: Q << assistant >>: A", "Q A"),
        ("  << human >>:", ""),
    ];
    for (input, expected) in cases {
        assert_eq!(strip_role_markers(input), expected, "{input:?}");
    }
}

//! A fully offline stand-in for the model provider.
//!
//! [`demo_backend`] answers every role with plausible, deterministic text:
//! numbered plans, pandas/matplotlib scripts, structured reviews, a
//! synthesis that keeps the best reviewed candidate, and judge scores. It
//! powers the `scripted` CLI backend and most tests. Extra rules can be
//! registered first with [`with_demo_rules`]; the first matching rule wins.

use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::bench::CORRECTNESS_QUESTION;
use crate::executor::StubTransport;
use crate::gateway::{ChatRequest, RoleTag, ScriptedBackend, Speaker};

const CHARTS: [&str; 8] = ["bar", "line", "scatter", "pie", "area", "histogram", "box", "horizontal bar"];

static PLAN_COUNT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Number of plans:\s*(\d+)").unwrap());
static FILES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Files available in the working directory:\s*([^\n,]+)").unwrap());
static CHART: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Chart type:\s*(.+)$").unwrap());
static TITLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Title:\s*(.+)$").unwrap());
static REQUEST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)^Request:\n(.*?)\n\n").unwrap());

pub fn demo_backend() -> ScriptedBackend {
    with_demo_rules(ScriptedBackend::new())
}

/// Appends the demo rules after any rules already registered.
pub fn with_demo_rules(backend: ScriptedBackend) -> ScriptedBackend {
    backend
        .rule_fn(RoleTag::Mpa, "", plans_reply)
        .rule_fn(RoleTag::Code, "", code_reply)
        .rule_fn(RoleTag::Fb, "", review_reply)
        .rule_fn(RoleTag::Syn, "", synthesis_reply)
        .rule_fn(RoleTag::Baseline, "", baseline_reply)
        .rule_fn(RoleTag::Judge, "", judge_reply)
}

/// Stub runner honoring `# stub:` directives; renders one figure by default.
pub fn demo_transport() -> StubTransport {
    StubTransport::markers()
}

fn first_user(req: &ChatRequest) -> &str {
    req.messages.iter().find(|m| m.speaker == Speaker::User).map_or("", |m| m.text.as_str())
}

fn query_of(text: &str) -> String {
    REQUEST.captures(text).map_or_else(|| "the requested chart".to_string(), |c| c[1].trim().to_string())
}

/// Printable text safe inside a double-quoted Python literal.
fn py_text(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_ascii() && !c.is_ascii_control() && *c != '"' && *c != '\\')
        .take(80)
        .collect::<String>()
        .trim()
        .to_string()
}

fn plans_reply(req: &ChatRequest) -> String {
    let text = first_user(req);
    let k: usize = PLAN_COUNT.captures(text).and_then(|c| c[1].parse().ok()).unwrap_or(1);
    let query = py_text(&query_of(text));
    (1..=k)
        .map(|i| {
            let chart = CHARTS[(i - 1) % CHARTS.len()];
            format!(
                "PLAN {i}:\nChart type: {chart}\nTitle: {query}\nTransforms: use the first column as categories and the second as values.\nEncoding: categories on x, values on y.\n"
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn chart_body(chart: &str) -> &'static str {
    match chart {
        "line" => "ax.plot(df[x], df[y], marker=\"o\")",
        "scatter" => "ax.scatter(df[x], df[y])",
        "pie" => "ax.pie(df[y], labels=df[x].astype(str))",
        "area" => "ax.fill_between(range(len(df)), df[y])\nax.set_xticks(range(len(df)), df[x].astype(str))",
        "histogram" => "ax.hist(df[y], bins=10)",
        "box" => "ax.boxplot(df[y])",
        "horizontal bar" => "ax.barh(df[x].astype(str), df[y])",
        _ => "ax.bar(df[x].astype(str), df[y])",
    }
}

fn script(chart: &str, title: &str, data_file: Option<&str>) -> String {
    let load = match data_file {
        Some(name) => format!("df = pd.read_csv(\"{}\")", py_text(name)),
        None => "df = pd.DataFrame({\"label\": [\"a\", \"b\", \"c\"], \"value\": [3, 1, 2]})".to_string(),
    };
    format!(
        "import matplotlib.pyplot as plt\nimport pandas as pd\n\n{load}\nx, y = df.columns[0], df.columns[1]\nfig, ax = plt.subplots(figsize=(6, 4))\n{}\nax.set_title(\"{}\")\nplt.tight_layout()\nplt.show()",
        chart_body(chart),
        py_text(title)
    )
}

fn data_file(text: &str) -> Option<String> {
    FILES.captures(text).map(|c| c[1].trim().to_string())
}

fn code_reply(req: &ChatRequest) -> String {
    let text = first_user(req);
    let chart = CHART.captures(text).map_or("bar".to_string(), |c| c[1].trim().to_lowercase());
    let title = TITLE.captures(text).map_or(String::new(), |c| c[1].to_string());
    format!("```python\n{}\n```", script(&chart, &title, data_file(text).as_deref()))
}

fn review_reply(req: &ChatRequest) -> String {
    let text = first_user(req);
    let ok = req.image_count() > 0 || text.contains("Executable: yes");
    if ok {
        "SEMANTIC ALIGNMENT: The chart answers the request.\nDATA CORRECTNESS: Columns are used as described.\nVISUAL QUALITY: Readable title and axes.\nVERDICT: usable".into()
    } else {
        "SEMANTIC ALIGNMENT: No chart was produced.\nDATA CORRECTNESS: The error must be fixed before the data can be checked.\nVISUAL QUALITY: Nothing rendered.\nVERDICT: discard".into()
    }
}

/// Keeps the first candidate reviewed as usable, else the first candidate.
fn synthesis_reply(req: &ChatRequest) -> String {
    let text = first_user(req);
    let mut first = None;
    for block in text.split("### Candidate ").skip(1) {
        let Some(code) = block.split("```python\n").nth(1).and_then(|rest| rest.split("\n```").next()) else {
            continue;
        };
        if first.is_none() {
            first = Some(code);
        }
        if block.contains("VERDICT: usable") {
            return format!("Merged the strongest candidate.\n```python\n{code}\n```");
        }
    }
    let code = first.map_or_else(|| script("bar", &query_of(text), data_file(text).as_deref()), str::to_string);
    format!("```python\n{code}\n```")
}

fn baseline_reply(req: &ChatRequest) -> String {
    let text = first_user(req);
    let body = script("bar", &query_of(text), data_file(text).as_deref());
    if req.messages[0].text.contains("step by step") {
        format!("Reasoning: a bar chart compares the categories directly.\n\n```python\n{body}\n```")
    } else {
        format!("```python\n{body}\n```")
    }
}

/// Deterministic score in 40..=95 derived from the attached images, or a
/// yes/no verdict when asked for correctness.
fn judge_reply(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    for m in &req.messages {
        for img in &m.images {
            hasher.update(img.as_slice());
        }
    }
    let digest = hasher.finalize();
    if first_user(req).contains(CORRECTNESS_QUESTION) {
        return if digest[1] % 4 == 0 { "no".into() } else { "yes".into() };
    }
    (40 + digest[0] as u32 % 56).to_string()
}

//! Turn an HTML document into the indexed text an agent reads.
//!
//!     cargo run --example snapshot [file.html]

use nestbrowse::snapshot::{parse_html, resolve_locator};

const DEMO: &str = r#"<html><head><title>Lantern Co.</title></head><body>
<nav><a href="/home">Home</a> <a href="/catalog">Catalog</a></nav>
<h1>Brass lantern</h1>
<p>Hand-finished brass, 30 cm tall.</p>
<form action="/lookup"><input name="sku" placeholder="SKU"> <button>Look up</button></form>
<script>console.log("not rendered")</script>
</body></html>"#;

fn main() {
    let html = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path).expect("readable file"),
        None => DEMO.to_string(),
    };
    let snap = parse_html(&html, "http://example.test/lantern");
    println!("title: {}  ({} tokens)\n", snap.title, snap.token_count);
    println!("{}\n", snap.rendered_text);
    for el in snap.interactive() {
        let loc = resolve_locator(&snap, el.element_id).unwrap();
        println!("{:<4} {:<8} {:<12} {:?}", el.element_id, el.role.as_str(), el.label, loc.strategy);
    }
}

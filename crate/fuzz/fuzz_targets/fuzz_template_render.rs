//! Template overrides and problem descriptions are user-supplied. The first
//! byte splits the input into a template body and a description; slot
//! contents must come through verbatim and never be rescanned.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tandem::prompts::{PromptLibrary, TemplateId};

fuzz_target!(|data: &[u8]| {
    if data.len() < 2 || data.len() > 1 << 16 {
        return;
    }
    let split = usize::from(data[0]) % (data.len() - 1) + 1;
    let Ok(template) = std::str::from_utf8(&data[1..split]) else {
        return;
    };
    let Ok(description) = std::str::from_utf8(&data[split..]) else {
        return;
    };
    let Ok(library) =
        PromptLibrary::builtin().with_template(TemplateId::Reflect, template.to_string())
    else {
        return;
    };
    if let Ok(request) = library.render_reflect(description) {
        assert!(request.rendered_text().contains(description));
    }
});

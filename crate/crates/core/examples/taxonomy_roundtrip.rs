//! Loads the bundled taxonomy, lists its label space and round-trips one
//! label through every serialized form.
//!
//!     cargo run --example taxonomy_roundtrip

use promptforge::gateway::parse_frame_response;
use promptforge::schema::{FrameLabel, LabelForm, LabelTaxonomy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let taxonomy = LabelTaxonomy::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/taxonomy.json"))?;
    println!("{} labels over {} actors", taxonomy.size(), taxonomy.actor_names().len());
    for actor in taxonomy.actor_names() {
        let n = taxonomy.enumerate_labels().iter().filter(|l| l.actor == actor).count();
        println!("  {actor:<20} {n:>3} labels");
    }

    let label = FrameLabel::new("Customer", "Unavailable", "On Vacation");
    println!("\nvalid: {}", taxonomy.validate_label(&label));
    for form in LabelForm::ALL {
        let text = taxonomy.render(&label, form)?;
        let back = match form {
            LabelForm::Flat => taxonomy.parse_label_string(&text)?,
            _ => parse_frame_response(&text, &taxonomy)?,
        };
        println!("{form:?}: {text}  round-trips: {}", back == label);
    }

    let reply = "The customer is away.\n(\"Delivery Service\", \"Incorrect Information\", \"Missing Contact Info\")";
    println!("\nparsed from prose: {}", parse_frame_response(reply, &taxonomy)?);
    Ok(())
}

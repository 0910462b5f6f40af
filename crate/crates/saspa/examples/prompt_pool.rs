//! Prompt pool lifecycle: instruction, ingestion, styling, instantiation.

use saspa::filters::semantic_prompt_set;
use saspa::fixtures::builtin_pool;
use saspa::prompts::{append_artistic_styles, build_prompt_instruction, instantiate_prompt, DEFAULT_ARTISTS};

fn main() -> saspa::Result<()> {
    println!("--- instruction sent to the language model ---");
    print!("{}", build_prompt_instruction("Airplane")?);

    let pool = builtin_pool("Airplane")?;
    println!("--- pool: {} templates, {} styled ---", pool.len(), pool.styled_count());

    let artists: Vec<String> = DEFAULT_ARTISTS.iter().map(|a| a.to_string()).collect();
    let styled = append_artistic_styles(&pool, &artists, 42)?;
    println!(
        "after styling: {} of {} templates carry a painting suffix",
        styled.styled_count(),
        styled.len()
    );

    println!("--- first instantiations for sub-class `Boeing 737-800` ---");
    for t in styled.templates.iter().take(3) {
        println!("  {}", instantiate_prompt(t, "Boeing 737-800")?);
    }
    if let Some(t) = styled.templates.iter().find(|t| t.artistic_suffix.is_some()) {
        println!("styled example:\n  {}", instantiate_prompt(t, "Boeing 737-800")?);
    }

    println!("--- semantic filter prompt set ---");
    for (i, p) in semantic_prompt_set("Airplane")?.iter().enumerate() {
        println!("  [{i}] {p}");
    }
    Ok(())
}

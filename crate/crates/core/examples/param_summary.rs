fn main() {
    let cfg = vaed_core::decoder::preset_8_32_32();
    let h = vaed_core::decoder::count_params(&cfg).unwrap();
    let s = vaed_core::decoder::count_params(&vaed_core::decoder::params::all_standard(&cfg)).unwrap();
    println!("hybrid total: {} ({:.2} M)", h.total, h.total as f64 / 1e6);
    for (n, c) in &h.per_block { println!("  {n}: {c}"); }
    println!("standard total: {} ({:.2} M)", s.total, s.total as f64 / 1e6);
    for (n, c) in &s.per_block { println!("  {n}: {c}"); }
    println!("reduction: {:.2}%", 100.0 * (s.total - h.total) as f64 / s.total as f64);
}

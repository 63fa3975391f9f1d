/// Derive an independent sub-seed from a base seed and a tag.
///
/// Uses the splitmix64 finalizer so that nearby tags produce uncorrelated
/// streams. Layer indices, view ids and draw indices all go through this
/// before seeding a generator.
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

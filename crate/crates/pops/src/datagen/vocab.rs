//! Prompt vocabularies used by the generation pipelines.
//!
//! The lists are built deterministically from hand-picked word stock and
//! truncated to fixed sizes: 290 objects, 24 placements, 310 texture
//! attributes, 208 backgrounds, 20,000 open-vocabulary class names, and
//! 60 instruct adjectives. Only the counts and determinism matter for
//! the mock pipelines; swap in curated lists when driving real models.

use std::sync::OnceLock;

const NOUNS: &[&str] = &[
    "chair", "table", "lamp", "vase", "teapot", "mug", "bottle", "bowl", "clock", "camera",
    "guitar", "violin", "drum", "bicycle", "scooter", "car", "truck", "boat", "kite", "umbrella",
    "backpack", "suitcase", "hat", "boot", "sandal", "scarf", "glove", "jacket", "dress", "belt",
    "sofa", "bench", "stool", "desk", "shelf", "mirror", "candle", "basket", "pillow", "blanket",
    "toaster", "kettle", "pan", "plate", "spoon", "fork", "knife", "whisk", "grater", "ladle",
    "robot", "drone", "telescope", "microscope", "globe", "compass", "lantern", "torch", "radio",
    "television",
];

const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "orange", "pink", "teal", "ivory", "charcoal",
];

const MATERIALS: &[&str] = &[
    "wood", "oak", "walnut", "bamboo", "cork", "marble", "granite", "slate", "limestone", "clay",
    "terracotta", "porcelain", "ceramic", "glass", "crystal", "obsidian", "steel", "iron", "copper",
    "brass", "bronze", "gold", "silver", "tin", "aluminum", "titanium", "leather", "suede", "felt",
    "wool", "cotton", "linen", "silk", "velvet", "denim", "canvas", "burlap", "lace", "fur",
    "feathers", "moss", "bark", "straw", "wicker", "rattan", "paper", "cardboard", "wax", "soap",
    "ice", "snow", "sand", "salt", "sugar", "chocolate", "caramel", "honeycomb", "coral", "pearl",
    "jade", "amber", "lava",
];

const TEXTURE_STYLES: &[&str] = &["polished", "rough", "woven", "cracked", "carved"];

const PLACES: &[&str] = &[
    "a beach", "a forest", "a desert", "a meadow", "a mountain trail", "a city street",
    "a rooftop", "a kitchen", "a living room", "a workshop", "a library", "a museum",
    "a greenhouse", "a garden", "a marketplace", "a harbor", "a train station", "a cafe",
    "a snowy field", "a riverbank", "a canyon", "a vineyard", "an orchard", "a courtyard",
    "a ballroom", "an attic", "a basement", "a lighthouse", "a pier", "a plaza", "a cave",
    "a cliffside", "a swamp", "a lagoon", "a glacier", "a dune field", "a bamboo grove",
    "a rice paddy", "a lavender field", "a junkyard", "a stadium", "an observatory",
    "a monastery", "a castle hall", "a subway platform", "a parking lot", "a boardwalk",
    "a botanical garden", "a salt flat", "a volcano rim", "a coral reef", "a shipyard",
];

const PLACE_PREFIXES: &[&str] = &["on", "near", "inside", "overlooking"];

const CLASS_ADJECTIVES: &[&str] = &[
    "ancient", "modern", "tiny", "giant", "ornate", "plain", "rustic", "sleek", "vintage",
    "futuristic", "weathered", "pristine", "folding", "inflatable", "mechanical", "electric",
    "handmade", "painted", "striped", "spotted", "glowing", "transparent", "matte", "glossy",
    "curved", "angular", "soft", "rigid", "portable", "massive", "miniature", "decorative",
    "industrial", "ceremonial", "nautical", "alpine", "tropical", "arctic", "urban", "rural",
    "royal", "humble", "enchanted", "broken", "restored", "inverted", "layered", "braided",
    "hollow", "solid", "speckled", "checkered", "embroidered", "engraved", "gilded", "frosted",
    "smoked", "tinted", "ribbed", "quilted", "perforated", "laminated", "varnished", "stained",
    "bleached", "dyed", "woven", "knitted", "molded", "forged", "welded", "riveted", "stitched",
    "padded", "armored", "feathered", "scaled", "furry", "slender", "stout", "twisted", "coiled",
    "segmented", "articulated", "collapsible", "modular", "amphibious", "solar", "clockwork",
    "ceramic", "wooden", "metallic", "stony", "glassy", "leathery", "papery", "waxy", "mossy",
    "sandy", "icy", "crystalline",
];

const CLASS_NOUNS: &[&str] = &[
    "chair", "table", "lamp", "vase", "teapot", "mug", "bottle", "bowl", "clock", "camera",
    "guitar", "violin", "drum", "flute", "harp", "bicycle", "scooter", "wagon", "sled", "canoe",
    "kayak", "sailboat", "ferry", "tractor", "plow", "windmill", "watermill", "fountain", "statue",
    "obelisk", "archway", "gazebo", "pergola", "trellis", "fence", "gate", "bridge", "tower",
    "turret", "dome", "spire", "column", "pedestal", "altar", "throne", "crib", "cradle",
    "hammock", "cot", "bunk", "wardrobe", "dresser", "cabinet", "hutch", "sideboard", "credenza",
    "ottoman", "recliner", "loveseat", "chaise", "futon", "daybed", "nightstand", "bookcase",
    "easel", "podium", "lectern", "workbench", "anvil", "forge", "kiln", "loom", "spindle",
    "spinning_wheel", "churn", "press", "grinder", "mortar", "pestle", "sieve", "funnel",
    "decanter", "carafe", "flask", "goblet", "chalice", "tankard", "stein", "tumbler", "saucer",
    "platter", "tureen", "ramekin", "skillet", "griddle", "wok", "cauldron", "colander",
    "rolling_pin", "cleaver", "spatula", "tongs", "skewer", "trivet", "cutting_board",
    "bread_box", "cookie_jar", "spice_rack", "pepper_mill", "egg_timer", "thermometer",
    "barometer", "sundial", "hourglass", "metronome", "abacus", "typewriter", "gramophone",
    "projector", "kaleidoscope", "periscope", "sextant", "astrolabe", "theodolite", "telescope",
    "microscope", "binoculars", "magnifier", "prism", "pendulum", "gyroscope", "compass",
    "lantern", "torch", "candelabra", "sconce", "chandelier", "brazier", "firepit", "stove",
    "furnace", "radiator", "fan", "bellows", "pump", "valve", "gear", "pulley", "winch", "crank",
    "lever", "ratchet", "sprocket", "flywheel", "piston", "turbine", "propeller", "rudder",
    "anchor", "buoy", "mast", "sail", "oar", "paddle", "harpoon", "net", "trap", "cage", "kennel",
    "coop", "hive", "birdhouse", "feeder", "trough", "saddle", "bridle", "stirrup", "harness",
    "yoke", "cart", "carriage", "chariot", "rickshaw", "palanquin", "litter", "stretcher",
    "wheelbarrow", "dolly", "crate", "barrel", "cask", "keg", "urn", "amphora", "sarcophagus",
    "reliquary", "casket", "chest", "trunk", "satchel", "knapsack", "quiver", "scabbard",
    "holster", "bandolier",
];

fn cache(cell: &'static OnceLock<Vec<String>>, build: impl FnOnce() -> Vec<String>) -> &'static [String] {
    cell.get_or_init(build)
}

/// 290 object names: the bare nouns plus color-qualified variants.
pub fn object_candidates() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let mut out: Vec<String> = NOUNS.iter().map(|n| n.to_string()).collect();
        'outer: for color in COLORS {
            for noun in NOUNS {
                if out.len() == 290 {
                    break 'outer;
                }
                out.push(format!("{color} {noun}"));
            }
        }
        assert_eq!(out.len(), 290);
        out
    })
}

/// 24 placement phrases appended to object prompts.
pub fn placement_candidates() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let out: Vec<String> = PLACES[..24].iter().map(|p| format!("on {p}")).collect();
        assert_eq!(out.len(), 24);
        out
    })
}

/// 310 texture attributes: material names plus styled variants.
pub fn texture_attributes() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let mut out: Vec<String> = MATERIALS.iter().map(|m| m.to_string()).collect();
        'outer: for style in TEXTURE_STYLES {
            for m in MATERIALS {
                if out.len() == 310 {
                    break 'outer;
                }
                out.push(format!("{style} {m}"));
            }
        }
        assert_eq!(out.len(), 310);
        out
    })
}

/// 208 background phrases ("near a harbor", ...).
pub fn background_candidates() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let mut out = Vec::with_capacity(208);
        for prefix in PLACE_PREFIXES {
            for place in PLACES {
                out.push(format!("{prefix} {place}"));
            }
        }
        assert_eq!(out.len(), 208);
        out
    })
}

/// 20,000 open-vocabulary class names (adjective-noun pairs).
pub fn open_images_classes() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let mut out = Vec::with_capacity(20_000);
        for adj in &CLASS_ADJECTIVES[..100] {
            for noun in &CLASS_NOUNS[..200] {
                out.push(format!("{adj} {}", noun.replace('_', " ")));
            }
        }
        assert_eq!(out.len(), 20_000);
        out
    })
}

/// 60 instruct adjectives.
pub fn adjective_candidates() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    cache(&CELL, || {
        let out: Vec<String> = CLASS_ADJECTIVES[..60].iter().map(|s| s.to_string()).collect();
        assert_eq!(out.len(), 60);
        out
    })
}

//! Images, label maps, datasets and the synthetic two-domain phantoms.

mod io;
mod phantom;
mod preprocess;
mod split;
mod types;

pub use io::{load_dataset, read_image, read_label_map, save_dataset, write_image, write_label_map};
pub use phantom::{generate_phantoms, IntensityModel, LobeGeometry, PhantomConfig, PhantomParams};
pub use preprocess::{preprocess, preprocess_dataset, resize_labels};
pub use split::{apportion, split, split_with};
pub use types::{Dataset, Domain, Image, Item, LabelMap, SplitTag, BACKGROUND, LEFT_LUNG, NUM_CLASSES, RIGHT_LUNG};

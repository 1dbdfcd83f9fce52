// Optional runtime for real sentence-encoder checkpoints; not installed in
// CI, loaded dynamically and guarded at the call site.
declare module "@xenova/transformers";

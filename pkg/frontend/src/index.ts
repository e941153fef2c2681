export { ServerClient } from "./client.js";
export { SessionModel, modelFromLog, renderAnnotation } from "./model.js";
export {
  buildScene,
  buildTextBlock,
  computeHighlights,
  greyedSpansOf,
  visibleElements,
} from "./scene.js";
export { interpolatePositions, layeredLayout } from "./layout.js";
export { bootstrap } from "./render.js";
export * from "./types.js";

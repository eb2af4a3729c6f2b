/**
 * The fixed prompt set. These strings are part of the extractor's contract
 * with any downstream embedding consumer; tests pin them byte-for-byte, so
 * change them only on purpose.
 */

export const REGION_LABELS = [
  "left_upper",
  "right_upper",
  "left_lower",
  "right_lower",
] as const;

export type RegionLabel = (typeof REGION_LABELS)[number];

const REGION_PHRASES: Record<RegionLabel, string> = {
  left_upper: "left upper part",
  right_upper: "right upper part",
  left_lower: "left lower part",
  right_lower: "right lower part",
};

export function regionalImagePrompt(label: RegionLabel): string {
  return `<image> Summarize the ${REGION_PHRASES[label]} of the image in one word:`;
}

export const SUMMARY_IMAGE_PROMPT = "<image> Summarize the above image in one word:";

export const TEXT_PROMPT = "<text> Summarize the above sentence in one word:";

/** The five image prompts in canonical order: four regions, then summary. */
export function imagePromptSet(): { label: string; prompt: string }[] {
  const prompts = REGION_LABELS.map((label) => ({
    label: label as string,
    prompt: regionalImagePrompt(label),
  }));
  prompts.push({ label: "summary", prompt: SUMMARY_IMAGE_PROMPT });
  return prompts;
}

/** Instruction for structured per-region captioning by a real model. */
export const RECAPTION_PROMPT =
  "Describe the image in a structured manner, following this order: left upper, " +
  "right upper, left lower, right lower, and summary. For each area, include " +
  "detailed descriptions of key elements, such as objects, colors, textures, " +
  "sizes, actions, or any other relevant features. Ensure each description is " +
  "under 100 words, but provide enough detail to give a vivid picture. The " +
  "output should be a dictionary with the following keys: 'left upper', " +
  "'right upper', 'left lower', 'right lower' and 'summary.'";

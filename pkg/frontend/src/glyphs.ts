/** Rendering of the four condition values; a strict bijection both ways. */

import type { ConditionGlyph } from "./types.js";

const TO_SYMBOL: Record<ConditionGlyph, string> = {
  "+": "▲", // ▲ above reference
  "-": "▼", // ▼ below reference
  "0": "≈", // ≈ approximately equal
  "x": "·", // · don't-care
};

const FROM_SYMBOL = new Map<string, ConditionGlyph>(
  Object.entries(TO_SYMBOL).map(([glyph, symbol]) => [symbol, glyph as ConditionGlyph]),
);

export const CONDITION_GLYPHS: ConditionGlyph[] = ["+", "-", "0", "x"];

export function conditionSymbol(glyph: ConditionGlyph): string {
  const symbol = TO_SYMBOL[glyph];
  if (!symbol) throw new Error(`unknown condition glyph: ${glyph}`);
  return symbol;
}

export function glyphFromSymbol(symbol: string): ConditionGlyph {
  const glyph = FROM_SYMBOL.get(symbol);
  if (!glyph) throw new Error(`unknown condition symbol: ${symbol}`);
  return glyph;
}

export function conditionTitle(glyph: ConditionGlyph): string {
  switch (glyph) {
    case "+": return "significantly above reference";
    case "-": return "significantly below reference";
    case "0": return "approximately equal to reference";
    case "x": return "don't-care (matches anything)";
  }
}

export function vectorSymbols(vector: ConditionGlyph[]): string[] {
  return vector.map(conditionSymbol);
}
